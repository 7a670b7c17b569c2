#pragma once

// Small trained models shared by several suites (trained once per process).

#include "fopt/fermat.hpp"

namespace fopt::test {

struct SmallModels {
  grid::GridSpec spec;
  data::TransitionDataset ds;
  metric::LearnedDistance distance;
  fermat::FermatEncoder encoder;
};

/// 7x7, 3 agents, 20k transitions, short distance and encoder training.
const SmallModels& small_models();

}  // namespace fopt::test
