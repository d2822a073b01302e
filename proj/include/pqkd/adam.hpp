// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_ADAM_HPP
#define PQKD_ADAM_HPP

#include <vector>

#include "pqkd/graph.hpp"

namespace pqkd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated to match the
// parameter list handed to the constructor; the step counter increases by
// one per step() across all parameters.
class Adam {
  public:
    Adam(std::vector<NodeRef> params, AdamConfig cfg = {});

    // Applies one update using the gradients accumulated on the parameters.
    // A parameter with no gradient buffer raises UsageError naming it.
    void step();

    long step_count() const { return step_; }

  private:
    std::vector<NodeRef> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamConfig cfg_;
    long step_ = 0;
};

}  // namespace pqkd

#endif
