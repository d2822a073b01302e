// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_MODELS_HPP
#define PQKD_MODELS_HPP

#include <memory>
#include <string>
#include <vector>

#include "pqkd/dictconv.hpp"
#include "pqkd/graph.hpp"
#include "pqkd/ops.hpp"
#include "pqkd/rng.hpp"

namespace pqkd {

// Three-block CNN with a GAP head:
//   conv 5x5/pad2 -> ReLU -> pool -> conv 3x3/pad1 -> ReLU -> pool ->
//   conv 3x3/pad1 -> ReLU -> dropout(0.25) -> GAP -> linear -> 10 logits.
// 28x28 inputs shrink to 7x7 before pooling collapses them.

constexpr int kNumClasses = 10;
constexpr double kDropoutP = 0.25;

class TeacherNet {
  public:
    TeacherNet(const Widths& widths, int in_channels, RngStream& init_rng);

    // x: [B,in_channels,H,W]; returns logits [B,10].
    NodeRef forward(const Tensor& x, bool train, RngStream* dropout_rng) const;

    std::vector<NodeRef> params() const;
    long param_count() const;
    const Widths& widths() const { return widths_; }

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

  private:
    Widths widths_;
    NodeRef w1_, b1_, w2_, b2_, w3_, b3_, fcw_, fcb_;
};

NodeRef teacher_forward(const TeacherNet& net, const Tensor& batch, bool train = false,
                        RngStream* dropout_rng = nullptr);

// Teacher macro-architecture with the in-scope convolutions replaced by
// photonic-conditioned dictionary layers sharing one conditioning vector.
class StudentNet {
  public:
    StudentNet(const Widths& widths, int in_channels, Scope scope,
               const std::array<int, 3>& ranks, int feature_dim, std::uint64_t run_seed,
               RngStream& init_rng, MixingSource mixing_source = MixingSource::from_feature);

    NodeRef forward(const Tensor& x, const std::vector<double>& z, bool train,
                    RngStream* dropout_rng);

    std::vector<NodeRef> params() const;  // trainables only
    long trainable_count(int dim_theta) const;
    Scope scope() const { return scope_; }

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

  private:
    struct ConvSlot {
        bool compressed = false;
        NodeRef w, b;                        // dense path
        std::shared_ptr<DictConvLayer> dict;  // compressed path
        int padding = 0;
    };
    ConvSlot make_slot(int idx, int c_in, int c_out, int k, int rank, int padding,
                       std::uint64_t run_seed, RngStream& init_rng, MixingSource source,
                       int feature_dim);

    Widths widths_;
    Scope scope_;
    std::array<ConvSlot, 3> convs_;
    NodeRef fcw_, fcb_;
};

// Per-layer projection seeds derived from the run seed by stream hashing.
std::uint64_t projection_seed_for_layer(std::uint64_t run_seed, int layer_index);

// Argmax class per row of a logits tensor.
std::vector<int> predict_classes(const Tensor& logits);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace pqkd

#endif
