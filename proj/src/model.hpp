#ifndef DRIVEGEN_MODEL_HPP
#define DRIVEGEN_MODEL_HPP

// The full conditional model: condition encoders + map branch + multi-view
// UNet over one parameter store.  Weights are initialized from RNG streams
// keyed by parameter name, so models sharing layer names (e.g. the base
// UNet inside the full model, or ablation variants) start from identical
// weights for the shared subset.

#include <string>
#include <vector>

#include "encoders.hpp"
#include "unet.hpp"

namespace dg {

// Raw per-scene conditioning. Boxes are scene-level; visibility filtering
// happens per view inside the model.
struct SceneInputs {
    std::string prompt;
    std::vector<CameraPose> poses;
    std::vector<Box3D> boxes;  // class_id indexes the model's class names
    const BEVMap* map = nullptr;  // required when the map branch is enabled
};

// How to present conditions for one forward pass.
struct CondOptions {
    // Training-time scene-level drop: h^s becomes zeros (still attended).
    bool drop_scene = false;
    // Guidance null branch: zero h^s, all-null box tokens, map per
    // map_null_zero; no padding mask (the null sequence is attended).
    bool unconditional = false;
    bool map_null_zero = true;  // unconditional map: zeros vs the real map
    double augment_rate = 0.0;  // invisible-box inclusion rate (training)
    RngStream* rng = nullptr;   // needed only when augment_rate > 0
};

template <typename T>
class Model {
  public:
    Model(const UNetConfig& cfg, const Vocabulary& vocab,
          std::vector<std::string> class_names, int num_views, BEVMapSpec map_spec,
          int map_channels, uint64_t init_seed)
        : cfg_(cfg),
          vocab_(vocab),
          class_names_(std::move(class_names)),
          num_views_(num_views),
          map_spec_(map_spec),
          map_channels_(map_channels),
          init_seed_(init_seed) {
        cfg_.validate();
        require(num_views_ >= 1, ErrorKind::InvalidArgument, "need at least one view");
        encoders_ = ConditionEncoders<T>(params_, init_seed, &vocab_, class_names_,
                                         cfg_.d_emb, cfg_.fourier_bands, cfg_.box_encoder);
        unet_ = UNet<T>::create(params_, init_seed, cfg_, num_views_);
        if (cfg_.map_branch)
            mapenc_ = MapEncoder<T>::create(params_, init_seed, cfg_, map_channels_);
    }

    // Sub-components hold pointers into params_ and vocab_.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const UNetConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const std::vector<std::string>& class_names() const { return class_names_; }
    int num_views() const { return num_views_; }
    int map_channels() const { return map_channels_; }
    const BEVMapSpec& map_spec() const { return map_spec_; }
    uint64_t init_seed() const { return init_seed_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    ConditionEncoders<T>& encoders() { return encoders_; }
    UNet<T>& unet() { return unet_; }

    // Nearest-neighbor resample of the BEV grid onto the image plane; the
    // map branch consumes map data at image resolution (no view warp).
    Tensor<T> map_image(const BEVMap& map) const {
        require(map.spec.grid_w == map_spec_.grid_w &&
                    map.spec.grid_h == map_spec_.grid_h &&
                    map.spec.num_classes == map_channels_,
                ErrorKind::Shape, "map does not match the configured spec");
        Tensor<T> out({map_channels_, cfg_.image_h, cfg_.image_w});
        for (int y = 0; y < cfg_.image_h; ++y) {
            const int j = y * map.spec.grid_h / cfg_.image_h;
            for (int x = 0; x < cfg_.image_w; ++x) {
                const int i = x * map.spec.grid_w / cfg_.image_w;
                for (int c = 0; c < map_channels_; ++c)
                    out.data[size_t((c * cfg_.image_h + y) * cfg_.image_w + x)] =
                        T(map.at(i, j, c));
            }
        }
        return out;
    }

    // Build per-view condition nodes inside the given graph.
    std::vector<EncodedView> encode_conditions(Graph<T>& g, const SceneInputs& in,
                                               const CondOptions& opt) const {
        require(int(in.poses.size()) == num_views_, ErrorKind::Shape,
                "scene must provide one pose per view");
        if (cfg_.map_branch && !(opt.unconditional && opt.map_null_zero))
            require(in.map != nullptr, ErrorKind::InvalidArgument,
                    "map branch enabled but no map provided");

        const std::vector<int> prompt_ids = vocab_.tokenize(in.prompt);
        const int scene_len = 1 + int(prompt_ids.size());
        const bool null_scene = opt.unconditional || opt.drop_scene;
        int h_text = -1;
        if (!null_scene) h_text = encoders_.embed_text(g, in.prompt);

        // Shared map input node (the map itself is scene-level; the
        // per-level features differ per view through the conditions).
        int map_node = -1;
        if (cfg_.map_branch) {
            if (opt.unconditional && opt.map_null_zero)
                map_node = g.zeros({map_channels_, cfg_.image_h, cfg_.image_w});
            else
                map_node = g.input(map_image(*in.map));
        }

        std::vector<EncodedView> out;
        for (int v = 0; v < num_views_; ++v) {
            EncodedView ev;
            int scene_tokens;
            if (null_scene) {
                scene_tokens = g.zeros({scene_len, cfg_.d_emb});
            } else {
                const int h_cam = encoders_.encode_camera(g, in.poses[size_t(v)]);
                scene_tokens = encoders_.scene_embedding(g, h_cam, h_text).tokens;
            }
            std::vector<uint8_t> masked;
            if (cfg_.box_encoder) {
                TokenSeq boxes;
                if (opt.unconditional) {
                    int rows = encoders_.null_box_token(g);
                    for (int j = 1; j < cfg_.max_boxes; ++j)
                        rows = g.concat_rows(rows, encoders_.null_box_token(g));
                    boxes.tokens = rows;
                    boxes.real.assign(size_t(cfg_.max_boxes), 0);
                } else {
                    boxes = encoders_.encode_boxes_for_view(
                        g, in.boxes, in.poses[size_t(v)], cfg_.max_boxes,
                        opt.augment_rate, opt.rng, cfg_.visibility_filter);
                }
                ev.cond_tokens = g.concat_rows(scene_tokens, boxes.tokens);
                if (!opt.unconditional) {
                    masked.assign(size_t(scene_len), 0);
                    for (uint8_t r : boxes.real) masked.push_back(r ? 0 : 1);
                }
            } else {
                ev.cond_tokens = scene_tokens;
                if (!opt.unconditional) masked.assign(size_t(scene_len), 0);
            }
            ev.masked_out = std::move(masked);
            if (cfg_.map_branch) {
                const std::vector<uint8_t>* mask =
                    ev.masked_out.empty() ? nullptr : &ev.masked_out;
                ev.map_feats = mapenc_.forward(g, map_node, ev.cond_tokens, mask);
            }
            out.push_back(std::move(ev));
        }
        return out;
    }

    std::vector<int> unet_forward(Graph<T>& g, const std::vector<int>& x_views, int t,
                                  const std::vector<EncodedView>& conds) const {
        return unet_.forward(g, x_views, t, conds);
    }

    // ---- inference helpers ---------------------------------------------
    // Conditions are constant across sampler steps, so their token
    // matrices and map pyramids are evaluated once and replayed as plain
    // inputs in each per-step graph.

    struct Precomputed {
        std::vector<Tensor<T>> cond_tokens;
        std::vector<std::vector<uint8_t>> masked_out;
        std::vector<std::vector<Tensor<T>>> pyramids;
    };

    Precomputed precompute_conditions(const SceneInputs& in,
                                      const CondOptions& opt) const {
        Graph<T> g(false);
        const auto evs = encode_conditions(g, in, opt);
        Precomputed pc;
        for (const auto& ev : evs) {
            pc.cond_tokens.push_back(g.val(ev.cond_tokens));
            pc.masked_out.push_back(ev.masked_out);
            std::vector<Tensor<T>> pyr;
            for (int node : ev.map_feats) pyr.push_back(g.val(node));
            pc.pyramids.push_back(std::move(pyr));
        }
        return pc;
    }

    std::vector<Tensor<T>> denoise(const std::vector<Tensor<T>>& x_views, int t,
                                   const Precomputed& pc) const {
        Graph<T> g(false);
        std::vector<int> xs;
        for (const auto& x : x_views) xs.push_back(g.input(x));
        std::vector<EncodedView> conds;
        for (size_t v = 0; v < pc.cond_tokens.size(); ++v) {
            EncodedView ev;
            ev.cond_tokens = g.input(pc.cond_tokens[v]);
            ev.masked_out = pc.masked_out[v];
            for (const auto& t2 : pc.pyramids[v]) ev.map_feats.push_back(g.input(t2));
            conds.push_back(std::move(ev));
        }
        const auto eps = unet_.forward(g, xs, t, conds);
        std::vector<Tensor<T>> out;
        for (int node : eps) out.push_back(g.val(node));
        return out;
    }

  private:
    UNetConfig cfg_;
    Vocabulary vocab_;
    std::vector<std::string> class_names_;
    int num_views_ = 1;
    BEVMapSpec map_spec_;
    int map_channels_ = 0;
    uint64_t init_seed_ = 0;
    ParamStore<T> params_;
    ConditionEncoders<T> encoders_;
    UNet<T> unet_;
    MapEncoder<T> mapenc_;
};

}  // namespace dg

#endif
