#include "trainloop.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dg {

std::vector<std::string> object_class_names(const WorldConfig& world) {
    std::vector<std::string> names;
    for (const auto& oc : world.object_classes) names.push_back(oc.name);
    return names;
}

int conditioning_map_channels(const WorldConfig& world, bool box_encoder_on) {
    return int(world.road_classes.size()) +
           (box_encoder_on ? 0 : int(world.object_classes.size()));
}

BEVMapSpec conditioning_map_spec(const WorldConfig& world, bool box_encoder_on) {
    BEVMapSpec spec = world.map;
    spec.num_classes = conditioning_map_channels(world, box_encoder_on);
    return spec;
}

BEVMap conditioning_map(const SceneRecord& scene, const WorldConfig& world,
                        bool box_encoder_on) {
    BEVMap road = rasterize_scene_map(scene, world.map);
    if (box_encoder_on) return road;

    // Ground footprints, one channel per object class.  Corner index bit
    // 0 is the x sign and bit 1 the y sign, so 0-1-3-2 walks the rectangle.
    BEVMapSpec box_spec = world.map;
    box_spec.num_classes = int(world.object_classes.size());
    std::vector<ClassedPolygon> footprints;
    for (const Box3D& b : scene.boxes) {
        const Corners c = box_corners(b);
        ClassedPolygon p;
        p.class_id = b.class_id;
        p.vertices = {{c[0].x, c[0].y}, {c[1].x, c[1].y},
                      {c[3].x, c[3].y}, {c[2].x, c[2].y}};
        footprints.push_back(std::move(p));
    }
    const BEVMap boxes = rasterize_map(footprints, box_spec);

    BEVMap out;
    out.spec = conditioning_map_spec(world, box_encoder_on);
    out.data.assign(size_t(out.spec.grid_w) * size_t(out.spec.grid_h) *
                        size_t(out.spec.num_classes),
                    0);
    for (int i = 0; i < out.spec.grid_w; ++i)
        for (int j = 0; j < out.spec.grid_h; ++j) {
            for (int k = 0; k < road.spec.num_classes; ++k)
                out.at(i, j, k) = road.at(i, j, k);
            for (int k = 0; k < box_spec.num_classes; ++k)
                out.at(i, j, road.spec.num_classes + k) = boxes.at(i, j, k);
        }
    return out;
}

std::string log_entry_json(const TrainLogEntry& e) {
    Json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["wall_ms"] = e.wall_ms;
    return dump_json(j);
}

namespace {

AdamW<float>::Config optimizer_config(const TrainConfig& cfg) {
    AdamW<float>::Config oc;
    oc.learning_rate = float(cfg.learning_rate);
    oc.weight_decay = float(cfg.weight_decay);
    oc.grad_clip_norm = float(cfg.grad_clip_norm);
    oc.warmup_steps = cfg.warmup_steps;
    return oc;
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data)
    : cfg_(cfg), data_(&data), sched_(make_schedule(cfg.schedule)),
      rng_(derive_seed(cfg.seed, 1)) {
    cfg_.validate();
    const WorldConfig& w = data.config;
    model_ = std::make_unique<Model<float>>(
        cfg_.model, Vocabulary::from_world(w), object_class_names(w), w.num_views,
        conditioning_map_spec(w, cfg_.model.box_encoder),
        conditioning_map_channels(w, cfg_.model.box_encoder), cfg_.seed);
    check_dataset_compat();
    opt_ = std::make_unique<AdamW<float>>(model_->params(), optimizer_config(cfg_));
}

Trainer::Trainer(const std::string& ckpt_path, const Dataset& data) : data_(&data) {
    const Checkpoint ck = read_checkpoint(ckpt_path);
    cfg_ = ck.config;
    sched_ = make_schedule(cfg_.schedule);
    model_ = build_model(ck);
    check_dataset_compat();
    opt_ = std::make_unique<AdamW<float>>(model_->params(), optimizer_config(cfg_));
    if (ck.has_optimizer) apply_optimizer_state(ck, *model_, *opt_);
    if (ck.rng_state.empty())
        rng_ = RngStream(derive_seed(cfg_.seed, 1));
    else
        rng_.load_state(ck.rng_state);
    step_ = ck.step;
}

void Trainer::check_dataset_compat() const {
    const WorldConfig& w = data_->config;
    require(data_->train_count() >= 1, ErrorKind::InvalidArgument,
            "dataset has no training scenes");
    require(cfg_.model.image_w == w.image_w && cfg_.model.image_h == w.image_h,
            ErrorKind::Shape,
            "model expects " + std::to_string(cfg_.model.image_w) + "x" +
                std::to_string(cfg_.model.image_h) + " images but the dataset holds " +
                std::to_string(w.image_w) + "x" + std::to_string(w.image_h));
    require(cfg_.model.in_channels == 3, ErrorKind::Shape,
            "dataset images are RGB; model must take 3 channels");
    require(model_->num_views() == w.num_views, ErrorKind::Shape,
            "model rig size does not match the dataset");
}

const Trainer::CachedScene& Trainer::cached(int scene_idx) {
    auto it = cache_.find(scene_idx);
    if (it != cache_.end()) return it->second;
    CachedScene c;
    for (int v = 0; v < model_->num_views(); ++v)
        c.latents.push_back(image_to_latent<float>(data_->load_image(scene_idx, v)));
    if (cfg_.model.map_branch)
        c.map = conditioning_map(data_->scenes[size_t(scene_idx)], data_->config,
                                 cfg_.model.box_encoder);
    return cache_.emplace(scene_idx, std::move(c)).first->second;
}

SceneInputs Trainer::inputs_for(int scene_idx, const CachedScene& c) const {
    const SceneRecord& sc = data_->scenes[size_t(scene_idx)];
    SceneInputs in;
    in.prompt = build_prompt(sc);
    in.poses = sc.rig.poses;
    in.boxes = sc.boxes;
    if (cfg_.model.map_branch) in.map = &c.map;
    return in;
}

TrainLogEntry Trainer::run_step() {
    const auto t0 = std::chrono::steady_clock::now();
    model_->params().zero_grad();
    const double inv = 1.0 / double(cfg_.batch_scenes);
    double batch_loss = 0.0;
    for (int s = 0; s < cfg_.batch_scenes; ++s) {
        const int idx = int(rng_.uniform_int(uint64_t(data_->train_count())));
        const CachedScene& c = cached(idx);
        Graph<float> g;
        const TrainingSample ts =
            training_loss(g, *model_, inputs_for(idx, c), c.latents, sched_, rng_,
                          cfg_.scene_drop_rate, cfg_.augment_rate);
        const double scene_loss = double(g.val(ts.loss).data[0]);
        require(std::isfinite(scene_loss), ErrorKind::Numeric,
                "training diverged: non-finite loss at step " + std::to_string(step_));
        g.backward(g.scale(ts.loss, float(inv)));
        batch_loss += scene_loss * inv;
    }
    TrainLogEntry e;
    e.step = step_;
    e.loss = batch_loss;
    e.lr = double(opt_->current_lr());
    opt_->step();
    ++step_;
    e.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    return e;
}

void Trainer::save(const std::string& path) const {
    write_checkpoint(path,
                     snapshot(cfg_, step_, *model_, opt_.get(), rng_.save_state()));
}

std::string run_training(Trainer& trainer, const std::string& out_dir,
                         void (*progress)(const TrainLogEntry&)) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::app);
    require(metrics.good(), ErrorKind::Io,
            "cannot open " + out_dir + "/metrics.jsonl");

    const TrainConfig& cfg = trainer.config();
    while (trainer.step() < cfg.total_steps) {
        const TrainLogEntry e = trainer.run_step();
        const int64_t done = e.step + 1;
        if (e.step % cfg.log_every == 0 || done == cfg.total_steps) {
            metrics << log_entry_json(e) << "\n";
            metrics.flush();
            require(metrics.good(), ErrorKind::Io, "metrics log write failed");
        }
        if (progress != nullptr) progress(e);
        if (done % cfg.checkpoint_every == 0 && done != cfg.total_steps)
            trainer.save(out_dir + "/ckpt_" + std::to_string(done) + ".bin");
    }
    const std::string final_path = out_dir + "/ckpt_final.bin";
    trainer.save(final_path);
    return final_path;
}

}  // namespace dg
