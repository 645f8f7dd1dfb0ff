#include "trainconfig.hpp"

#include <cmath>

namespace dg {

namespace {

// Missing keys fall back to the default already present in `*out`;
// present keys must convert cleanly.
template <typename T>
void field_or(const Json& j, const char* key, const std::string& ctx, T* out) {
    if (!j.contains(key)) return;
    try {
        *out = j.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(ErrorKind::Format, ctx + ": bad value for \"" + std::string(key) + "\"");
    }
}

}  // namespace

void TrainConfig::validate() const {
    require(total_steps >= 1, ErrorKind::InvalidArgument, "total_steps must be >= 1");
    require(batch_scenes >= 1, ErrorKind::InvalidArgument, "batch_scenes must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0,
            ErrorKind::InvalidArgument, "learning_rate must be positive");
    require(warmup_steps >= 0, ErrorKind::InvalidArgument,
            "warmup_steps must be >= 0");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0,
            ErrorKind::InvalidArgument, "weight_decay must be >= 0");
    require(std::isfinite(grad_clip_norm), ErrorKind::InvalidArgument,
            "grad_clip_norm must be finite");
    require(scene_drop_rate >= 0.0 && scene_drop_rate <= 1.0,
            ErrorKind::InvalidArgument, "scene_drop_rate must lie in [0, 1]");
    require(augment_rate >= 0.0 && augment_rate <= 1.0, ErrorKind::InvalidArgument,
            "augment_rate must lie in [0, 1]");
    require(log_every >= 1, ErrorKind::InvalidArgument, "log_every must be >= 1");
    require(checkpoint_every >= 1, ErrorKind::InvalidArgument,
            "checkpoint_every must be >= 1");
    model.validate();
    make_schedule(schedule);  // rejects bad beta ranges and step counts
}

Json unet_config_to_json(const UNetConfig& c) {
    Json j;
    j["image_w"] = c.image_w;
    j["image_h"] = c.image_h;
    j["in_channels"] = c.in_channels;
    j["base_channels"] = c.base_channels;
    j["channel_mult"] = c.channel_mult;
    j["attention_levels"] = c.attention_levels;
    j["num_heads"] = c.num_heads;
    j["d_emb"] = c.d_emb;
    j["max_boxes"] = c.max_boxes;
    j["fourier_bands"] = c.fourier_bands;
    j["norm_groups"] = c.norm_groups;
    j["attended_views"] = to_string(c.attended_views);
    j["cross_view"] = c.cross_view;
    j["map_branch"] = c.map_branch;
    j["box_encoder"] = c.box_encoder;
    j["visibility_filter"] = c.visibility_filter;
    return j;
}

UNetConfig unet_config_from_json(const Json& j) {
    const std::string ctx = "model config";
    check_keys(j, {"image_w", "image_h", "in_channels", "base_channels",
                   "channel_mult", "attention_levels", "num_heads", "d_emb",
                   "max_boxes", "fourier_bands", "norm_groups", "attended_views",
                   "cross_view", "map_branch", "box_encoder", "visibility_filter"},
               ctx);
    UNetConfig c;
    field_or(j, "image_w", ctx, &c.image_w);
    field_or(j, "image_h", ctx, &c.image_h);
    field_or(j, "in_channels", ctx, &c.in_channels);
    field_or(j, "base_channels", ctx, &c.base_channels);
    field_or(j, "channel_mult", ctx, &c.channel_mult);
    field_or(j, "attention_levels", ctx, &c.attention_levels);
    field_or(j, "num_heads", ctx, &c.num_heads);
    field_or(j, "d_emb", ctx, &c.d_emb);
    field_or(j, "max_boxes", ctx, &c.max_boxes);
    field_or(j, "fourier_bands", ctx, &c.fourier_bands);
    field_or(j, "norm_groups", ctx, &c.norm_groups);
    std::string views = to_string(c.attended_views);
    field_or(j, "attended_views", ctx, &views);
    c.attended_views = attended_views_from_string(views);
    field_or(j, "cross_view", ctx, &c.cross_view);
    field_or(j, "map_branch", ctx, &c.map_branch);
    field_or(j, "box_encoder", ctx, &c.box_encoder);
    field_or(j, "visibility_filter", ctx, &c.visibility_filter);
    return c;
}

Json train_config_to_json(const TrainConfig& c) {
    Json j;
    j["dataset"] = c.dataset;
    j["seed"] = c.seed;
    j["total_steps"] = c.total_steps;
    j["batch_scenes"] = c.batch_scenes;
    j["learning_rate"] = c.learning_rate;
    j["warmup_steps"] = c.warmup_steps;
    j["weight_decay"] = c.weight_decay;
    j["grad_clip_norm"] = c.grad_clip_norm;
    j["scene_drop_rate"] = c.scene_drop_rate;
    j["augment_rate"] = c.augment_rate;
    j["log_every"] = c.log_every;
    j["checkpoint_every"] = c.checkpoint_every;
    Json s;
    s["num_steps"] = c.schedule.num_steps;
    s["beta_start"] = c.schedule.beta_start;
    s["beta_end"] = c.schedule.beta_end;
    s["kind"] = c.schedule.kind;
    j["schedule"] = s;
    j["model"] = unet_config_to_json(c.model);
    return j;
}

TrainConfig train_config_from_json(const Json& j) {
    const std::string ctx = "train config";
    check_keys(j, {"dataset", "seed", "total_steps", "batch_scenes",
                   "learning_rate", "warmup_steps", "weight_decay",
                   "grad_clip_norm", "scene_drop_rate", "augment_rate",
                   "log_every", "checkpoint_every", "schedule", "model"},
               ctx);
    TrainConfig c;
    field_or(j, "dataset", ctx, &c.dataset);
    field_or(j, "seed", ctx, &c.seed);
    field_or(j, "total_steps", ctx, &c.total_steps);
    field_or(j, "batch_scenes", ctx, &c.batch_scenes);
    field_or(j, "learning_rate", ctx, &c.learning_rate);
    field_or(j, "warmup_steps", ctx, &c.warmup_steps);
    field_or(j, "weight_decay", ctx, &c.weight_decay);
    field_or(j, "grad_clip_norm", ctx, &c.grad_clip_norm);
    field_or(j, "scene_drop_rate", ctx, &c.scene_drop_rate);
    field_or(j, "augment_rate", ctx, &c.augment_rate);
    field_or(j, "log_every", ctx, &c.log_every);
    field_or(j, "checkpoint_every", ctx, &c.checkpoint_every);
    if (j.contains("schedule")) {
        const Json& s = j.at("schedule");
        check_keys(s, {"num_steps", "beta_start", "beta_end", "kind"},
                   ctx + ".schedule");
        field_or(s, "num_steps", ctx, &c.schedule.num_steps);
        field_or(s, "beta_start", ctx, &c.schedule.beta_start);
        field_or(s, "beta_end", ctx, &c.schedule.beta_end);
        field_or(s, "kind", ctx, &c.schedule.kind);
    }
    if (j.contains("model")) c.model = unet_config_from_json(j.at("model"));
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    return train_config_from_json(parse_json(read_text_file(path), path));
}

}  // namespace dg
