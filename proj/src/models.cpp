// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/models.hpp"

#include <cmath>

namespace pqkd {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, RngStream& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = std * rng.next_gaussian();
    return t;
}

}  // namespace

TeacherNet::TeacherNet(const Widths& widths, int in_channels, RngStream& init_rng)
    : widths_(widths) {
    if (widths.c1 < 1 || widths.c2 < 1 || widths.c3 < 1)
        throw ConfigError("TeacherNet: widths must be positive");
    w1_ = make_param(he_normal({widths.c1, in_channels, 5, 5}, in_channels * 25, init_rng),
                     "teacher.conv1.w");
    b1_ = make_param(Tensor::zeros({widths.c1}), "teacher.conv1.b");
    w2_ = make_param(he_normal({widths.c2, widths.c1, 3, 3}, widths.c1 * 9, init_rng),
                     "teacher.conv2.w");
    b2_ = make_param(Tensor::zeros({widths.c2}), "teacher.conv2.b");
    w3_ = make_param(he_normal({widths.c3, widths.c2, 3, 3}, widths.c2 * 9, init_rng),
                     "teacher.conv3.w");
    b3_ = make_param(Tensor::zeros({widths.c3}), "teacher.conv3.b");
    fcw_ = make_param(he_normal({kNumClasses, widths.c3}, widths.c3, init_rng), "teacher.fc.w");
    fcb_ = make_param(Tensor::zeros({kNumClasses}), "teacher.fc.b");
}

NodeRef TeacherNet::forward(const Tensor& x, bool train, RngStream* dropout_rng) const {
    if (x.ndim() != 4)
        throw ConfigError("TeacherNet::forward: expected [B,C,H,W], got " + shape_str(x.shape));
    if (x.dim(1) != w1_->value.dim(1))
        throw ConfigError("TeacherNet::forward: input channels " + std::to_string(x.dim(1)) +
                          " do not match conv1 width " + std::to_string(w1_->value.dim(1)));
    if (train && dropout_rng == nullptr)
        throw UsageError("TeacherNet::forward: training pass needs a dropout stream");
    NodeRef h = make_constant(x);
    h = maxpool2x2(relu(conv2d(h, w1_, b1_, 2)));
    h = maxpool2x2(relu(conv2d(h, w2_, b2_, 1)));
    h = relu(conv2d(h, w3_, b3_, 1));
    if (train) h = dropout(h, kDropoutP, *dropout_rng, true);
    h = global_avg_pool(h);
    return linear(h, fcw_, fcb_);
}

std::vector<NodeRef> TeacherNet::params() const {
    return {w1_, b1_, w2_, b2_, w3_, b3_, fcw_, fcb_};
}

long TeacherNet::param_count() const {
    long n = 0;
    for (const auto& p : params()) n += p->value.numel();
    return n;
}

std::vector<Tensor> TeacherNet::snapshot() const {
    std::vector<Tensor> snap;
    for (const auto& p : params()) snap.push_back(p->value);
    return snap;
}

void TeacherNet::restore(const std::vector<Tensor>& snap) {
    const auto ps = params();
    if (snap.size() != ps.size()) throw UsageError("TeacherNet::restore: snapshot size mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        check_same_shape(ps[i]->value, snap[i], "TeacherNet::restore");
        ps[i]->value = snap[i];
    }
}

NodeRef teacher_forward(const TeacherNet& net, const Tensor& batch, bool train,
                        RngStream* dropout_rng) {
    return net.forward(batch, train, dropout_rng);
}

std::uint64_t projection_seed_for_layer(std::uint64_t run_seed, int layer_index) {
    return RngStream::named(run_seed, "projection.layer").substream(static_cast<std::uint64_t>(layer_index)).key();
}

StudentNet::ConvSlot StudentNet::make_slot(int idx, int c_in, int c_out, int k, int rank,
                                           int padding, std::uint64_t run_seed,
                                           RngStream& init_rng, MixingSource source,
                                           int feature_dim) {
    ConvSlot slot;
    slot.padding = padding;
    const std::string prefix = "student.conv" + std::to_string(idx + 1);
    if (scope_covers(scope_, idx)) {
        slot.compressed = true;
        slot.dict = std::make_shared<DictConvLayer>(
            DictConvLayer::create(c_in, c_out, k, rank, padding,
                                  projection_seed_for_layer(run_seed, idx), init_rng, source,
                                  feature_dim));
        slot.dict->basis->name = prefix + ".basis";
        slot.dict->bias->name = prefix + ".bias";
        if (slot.dict->mixing_param) slot.dict->mixing_param->name = prefix + ".mixing";
    } else {
        slot.w = make_param(he_normal({c_out, c_in, k, k}, c_in * k * k, init_rng), prefix + ".w");
        slot.b = make_param(Tensor::zeros({c_out}), prefix + ".b");
    }
    return slot;
}

StudentNet::StudentNet(const Widths& widths, int in_channels, Scope scope,
                       const std::array<int, 3>& ranks, int feature_dim, std::uint64_t run_seed,
                       RngStream& init_rng, MixingSource mixing_source)
    : widths_(widths), scope_(scope) {
    convs_[0] = make_slot(0, in_channels, widths.c1, 5, ranks[0], 2, run_seed, init_rng,
                          mixing_source, feature_dim);
    convs_[1] = make_slot(1, widths.c1, widths.c2, 3, ranks[1], 1, run_seed, init_rng,
                          mixing_source, feature_dim);
    convs_[2] = make_slot(2, widths.c2, widths.c3, 3, ranks[2], 1, run_seed, init_rng,
                          mixing_source, feature_dim);
    fcw_ = make_param(he_normal({kNumClasses, widths.c3}, widths.c3, init_rng), "student.fc.w");
    fcb_ = make_param(Tensor::zeros({kNumClasses}), "student.fc.b");
}

NodeRef StudentNet::forward(const Tensor& x, const std::vector<double>& z, bool train,
                            RngStream* dropout_rng) {
    if (x.ndim() != 4)
        throw ConfigError("StudentNet::forward: expected [B,C,H,W], got " + shape_str(x.shape));
    if (train && dropout_rng == nullptr)
        throw UsageError("StudentNet::forward: training pass needs a dropout stream");
    auto apply_slot = [&](const NodeRef& h, ConvSlot& slot) {
        if (slot.compressed) return dictconv_forward(h, *slot.dict, z);
        return conv2d(h, slot.w, slot.b, slot.padding);
    };
    NodeRef h = make_constant(x);
    h = maxpool2x2(relu(apply_slot(h, convs_[0])));
    h = maxpool2x2(relu(apply_slot(h, convs_[1])));
    h = relu(apply_slot(h, convs_[2]));
    if (train) h = dropout(h, kDropoutP, *dropout_rng, true);
    h = global_avg_pool(h);
    return linear(h, fcw_, fcb_);
}

std::vector<NodeRef> StudentNet::params() const {
    std::vector<NodeRef> ps;
    for (const auto& slot : convs_) {
        if (slot.compressed) {
            ps.push_back(slot.dict->basis);
            ps.push_back(slot.dict->bias);
            if (slot.dict->mixing_param) ps.push_back(slot.dict->mixing_param);
        } else {
            ps.push_back(slot.w);
            ps.push_back(slot.b);
        }
    }
    ps.push_back(fcw_);
    ps.push_back(fcb_);
    return ps;
}

long StudentNet::trainable_count(int dim_theta) const {
    long n = 0;
    for (const auto& p : params()) n += p->value.numel();
    return n + dim_theta;
}

std::vector<Tensor> StudentNet::snapshot() const {
    std::vector<Tensor> snap;
    for (const auto& p : params()) snap.push_back(p->value);
    return snap;
}

void StudentNet::restore(const std::vector<Tensor>& snap) {
    const auto ps = params();
    if (snap.size() != ps.size()) throw UsageError("StudentNet::restore: snapshot size mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        check_same_shape(ps[i]->value, snap[i], "StudentNet::restore");
        ps[i]->value = snap[i];
    }
}

std::vector<int> predict_classes(const Tensor& logits) {
    if (logits.ndim() != 2)
        throw ConfigError("predict_classes: expected [B,C], got " + shape_str(logits.shape));
    const int batch = logits.dim(0), classes = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(batch));
    for (int bi = 0; bi < batch; ++bi) {
        const double* row = logits.ptr() + static_cast<std::size_t>(bi) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<std::size_t>(bi)] = best;
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const auto pred = predict_classes(logits);
    if (pred.size() != labels.size()) throw UsageError("accuracy: label count mismatch");
    if (pred.empty()) return 0.0;
    long hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace pqkd
