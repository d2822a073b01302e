// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_OPS_HPP
#define PQKD_OPS_HPP

#include <vector>

#include "pqkd/graph.hpp"
#include "pqkd/rng.hpp"

namespace pqkd {

// Layer ops used by the teacher/student networks. Inputs are activation
// tensors shaped [B,C,H,W] (conv stack) or [B,F] (head); conv2d also accepts
// a single image [C,H,W]. All convolutions are stride-1 cross-correlations.

// x:[B,Cin,H,W] or [Cin,H,W], w:[Cout,Cin,k,k], b:[Cout], k odd, padding>=0.
// Output spatial size H' = H + 2*padding - k + 1.
NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int padding);

NodeRef relu(const NodeRef& x);

// 2x2 max pooling with stride 2; spatial dims must be even.
NodeRef maxpool2x2(const NodeRef& x);

// [B,C,H,W] -> [B,C]
NodeRef global_avg_pool(const NodeRef& x);

// x:[B,F], w:[out,F], b:[out] -> [B,out]
NodeRef linear(const NodeRef& x, const NodeRef& w, const NodeRef& b);

// Inverted dropout: keeps units with probability 1-p and scales by 1/(1-p)
// while training; identity when train is false. 0 <= p < 1.
NodeRef dropout(const NodeRef& x, double p, RngStream& rng, bool train);

// Row-wise log softmax over the last dimension of [B,C].
NodeRef log_softmax(const NodeRef& x);

NodeRef scale(const NodeRef& x, double c);
NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sum(const NodeRef& x);   // -> scalar [1]
NodeRef mean(const NodeRef& x);  // -> scalar [1]
NodeRef square(const NodeRef& x);

// Mean over rows of -logp[b, labels[b]]; labels must lie in [0, C).
NodeRef nll_mean(const NodeRef& logp, const std::vector<int>& labels);

// Mean over rows of sum_c p_ref[b,c] * (log p_ref[b,c] - logp[b,c]) with
// p_ref a constant probability table: batch-mean KL(p_ref || softmax).
NodeRef kl_mean_const(const NodeRef& logp, const Tensor& p_ref);

// Reference (non-autodiff) forward helpers shared with analysis code.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace pqkd

#endif
