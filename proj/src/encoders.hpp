#ifndef DRIVEGEN_ENCODERS_HPP
#define DRIVEGEN_ENCODERS_HPP

// Condition encoders: text prompt, camera pose, and 3D box tokens.  All
// outputs share the embedding width d_emb so scene, camera, and box
// tokens can be concatenated into one cross-attention key/value set.
//
// Geometry enters the graph as constants (Fourier features of poses and
// box corners); gradients flow only into the learned tables and MLPs.

#include <string>
#include <vector>

#include "geometry.hpp"
#include "graph.hpp"
#include "layers.hpp"
#include "vocab.hpp"

namespace dg {

// A token matrix node plus its padding mask. real[i] true = actual token,
// false = padding.  Attention call sites invert this into a masked-out
// vector (and may ignore it entirely for unconditional passes, where the
// all-null sequence itself is the condition).
struct TokenSeq {
    int tokens = -1;
    std::vector<uint8_t> real;
};

// Classic transformer sinusoid: d/2 frequency pairs (sin, cos) at
// geometrically spaced wavelengths.
inline std::vector<double> sinusoid_features(double pos, int d) {
    require(d % 2 == 0, ErrorKind::Shape, "sinusoid width must be even");
    std::vector<double> out(size_t(d), 0.0);
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / d);
        out[size_t(2 * i)] = std::sin(pos * freq);
        out[size_t(2 * i + 1)] = std::cos(pos * freq);
    }
    return out;
}

template <typename T>
class ConditionEncoders {
  public:
    ConditionEncoders() = default;

    // box_encoder=false skips the box parameter group entirely (the
    // boxes-into-map ablation); box encoding calls then throw.
    ConditionEncoders(ParamStore<T>& ps, uint64_t seed, const Vocabulary* vocab,
                      std::vector<std::string> class_names, int d_emb, int fourier_bands,
                      bool box_encoder = true)
        : vocab_(vocab),
          class_names_(std::move(class_names)),
          d_emb_(d_emb),
          bands_(fourier_bands) {
        require(d_emb >= 2 && d_emb % 2 == 0, ErrorKind::Shape,
                "d_emb must be even and >= 2");
        require(fourier_bands >= 1, ErrorKind::InvalidArgument,
                "fourier_bands must be >= 1");
        word_table_ = make_param(ps, seed, "text.table", {vocab->size(), d_emb},
                                 1.0 / std::sqrt(double(d_emb)));
        positions_ = Tensor<T>({vocab->max_len(), d_emb});
        for (int p = 0; p < vocab->max_len(); ++p) {
            const auto row = sinusoid_features(double(p), d_emb);
            for (int i = 0; i < d_emb; ++i)
                positions_.data[size_t(p) * d_emb + i] = T(row[size_t(i)]);
        }
        const int hidden = 2 * d_emb;
        cam_mlp_ = Mlp2<T>::create(ps, seed, "enc.cam", 7 * 6 * bands_, hidden, d_emb);
        if (box_encoder) {
            box_pos_mlp_ =
                Mlp2<T>::create(ps, seed, "enc.boxpos", 8 * 6 * bands_, hidden, d_emb);
            box_fuse_mlp_ =
                Mlp2<T>::create(ps, seed, "enc.boxfuse", 2 * d_emb, hidden, d_emb);
            null_box_ = make_param(ps, seed, "enc.nullbox", {1, d_emb},
                                   1.0 / std::sqrt(double(d_emb)));
        }
    }

    bool has_box_encoder() const { return null_box_ != nullptr; }

    int d_emb() const { return d_emb_; }
    int fourier_bands() const { return bands_; }
    const Vocabulary& vocab() const { return *vocab_; }
    const std::vector<std::string>& class_names() const { return class_names_; }

    // Per-token embedding plus fixed positional encoding -> [L, d_emb].
    int embed_text(Graph<T>& g, const std::string& prompt) const {
        return embed_token_ids(g, vocab_->tokenize(prompt));
    }

    // Fourier features of the flattened pose through a 2-layer MLP -> [1, d_emb].
    int encode_camera(Graph<T>& g, const CameraPose& pose) const {
        const std::vector<double> feats = pose_features(pose, bands_);
        Tensor<T> in({1, int(feats.size())});
        for (size_t i = 0; i < feats.size(); ++i) in.data[i] = T(feats[i]);
        return cam_mlp_.forward(g, g.input(std::move(in)));
    }

    // h^s = [camera token, text tokens]; every position is a real token.
    TokenSeq scene_embedding(Graph<T>& g, int h_cam, int h_text) const {
        TokenSeq s;
        s.tokens = g.concat_rows(h_cam, h_text);
        s.real.assign(size_t(g.val(s.tokens).dim(0)), 1);
        return s;
    }

    // Mean pool over the class name's text tokens (positional encodings
    // included before pooling) -> [1, d_emb].
    int class_embedding(Graph<T>& g, int class_id) const {
        require(class_id >= 0 && class_id < int(class_names_.size()),
                ErrorKind::InvalidArgument,
                "class id " + std::to_string(class_id) + " out of range");
        const int toks = embed_token_ids(g, vocab_->tokenize(class_names_[size_t(class_id)]));
        return g.reshape(g.mean_rows(toks), {1, d_emb_});
    }

    // Corner Fourier features -> position vector; fused with the pooled
    // class embedding -> one box token [1, d_emb].
    int encode_box(Graph<T>& g, const Box3D& box, int class_emb) const {
        require(has_box_encoder(), ErrorKind::InvalidArgument,
                "box encoder is disabled in this model");
        const Corners corners = box_corners(box);
        Tensor<T> in({1, 8 * 6 * bands_});
        size_t k = 0;
        for (const Vec3& c : corners)
            for (double v : fourier_embed(c, bands_)) in.data[k++] = T(v);
        const int e_pos = box_pos_mlp_.forward(g, g.input(std::move(in)));
        return box_fuse_mlp_.forward(g, g.concat_cols(class_emb, e_pos));
    }

    int null_box_token(Graph<T>& g) const {
        require(has_box_encoder(), ErrorKind::InvalidArgument,
                "box encoder is disabled in this model");
        return g.param(null_box_);
    }

    // Visibility-filtered box tokens for one view, padded to max_boxes
    // with the null token.  Invisible boxes are independently kept with
    // probability augment_rate (training-time augmentation); rate 0 makes
    // the result a deterministic function of (boxes, pose, weights).
    // Order follows the input order.  filter_visibility=false keeps every
    // box regardless of the camera (the no-filter ablation) and consumes
    // no RNG draws.
    TokenSeq encode_boxes_for_view(Graph<T>& g, const std::vector<Box3D>& boxes,
                                   const CameraPose& pose, int max_boxes,
                                   double augment_rate, RngStream* rng,
                                   bool filter_visibility = true) const {
        require(max_boxes >= 1, ErrorKind::InvalidArgument,
                "max_boxes must be >= 1");
        require(augment_rate >= 0.0 && augment_rate <= 1.0, ErrorKind::InvalidArgument,
                "augment_rate must lie in [0,1]");
        require(augment_rate == 0.0 || rng != nullptr, ErrorKind::InvalidArgument,
                "augmentation requires an RNG stream");
        std::vector<size_t> keep;
        for (size_t i = 0; i < boxes.size(); ++i) {
            if (!filter_visibility || box_visible(boxes[i], pose))
                keep.push_back(i);
            else if (augment_rate > 0.0 && rng->bernoulli(augment_rate))
                keep.push_back(i);
        }
        require(int(keep.size()) <= max_boxes, ErrorKind::Capacity,
                "view has " + std::to_string(keep.size()) + " box tokens; capacity is " +
                    std::to_string(max_boxes));

        // One pooled class embedding per distinct class in this view.
        std::vector<int> class_nodes(class_names_.size(), -1);
        TokenSeq seq;
        seq.real.assign(size_t(max_boxes), 0);
        int rows = -1;
        for (size_t j = 0; j < keep.size(); ++j) {
            const size_t i = keep[j];
            const int cid = boxes[i].class_id;
            if (class_nodes[size_t(cid)] < 0)
                class_nodes[size_t(cid)] = class_embedding(g, cid);
            const int tok = encode_box(g, boxes[i], class_nodes[size_t(cid)]);
            rows = (rows < 0) ? tok : g.concat_rows(rows, tok);
            seq.real[j] = 1;
        }
        for (int j = int(keep.size()); j < max_boxes; ++j) {
            const int tok = null_box_token(g);
            rows = (rows < 0) ? tok : g.concat_rows(rows, tok);
        }
        seq.tokens = rows;
        return seq;
    }

  private:
    int embed_token_ids(Graph<T>& g, const std::vector<int>& ids) const {
        require(!ids.empty(), ErrorKind::InvalidArgument, "empty token sequence");
        const int n = int(ids.size());
        const int e = g.embed_rows(g.param(word_table_), ids);
        Tensor<T> pos({n, d_emb_});
        std::memcpy(pos.ptr(), positions_.ptr(), size_t(n) * d_emb_ * sizeof(T));
        return g.add(e, g.input(std::move(pos)));
    }

    const Vocabulary* vocab_ = nullptr;
    std::vector<std::string> class_names_;
    int d_emb_ = 0, bands_ = 0;
    Parameter<T>* word_table_ = nullptr;
    Tensor<T> positions_;
    Mlp2<T> cam_mlp_, box_pos_mlp_, box_fuse_mlp_;
    Parameter<T>* null_box_ = nullptr;
};

}  // namespace dg

#endif
