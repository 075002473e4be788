// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epifuse {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define EPIFUSE_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                             \
    explicit Name(const std::string& what = #Name) : Error(what) {} \
  }

// geometry
EPIFUSE_DEFINE_ERROR(ZeroDepth);
EPIFUSE_DEFINE_ERROR(BehindCamera);
EPIFUSE_DEFINE_ERROR(DegenerateBaseline);
EPIFUSE_DEFINE_ERROR(DegenerateLine);
EPIFUSE_DEFINE_ERROR(DegenerateDenominator);
EPIFUSE_DEFINE_ERROR(NoConvergence);

// heatmap
EPIFUSE_DEFINE_ERROR(AllZero);

// fusion
EPIFUSE_DEFINE_ERROR(InsufficientViews);
EPIFUSE_DEFINE_ERROR(AllZeroWeights);

// weightnet
EPIFUSE_DEFINE_ERROR(ShapeMismatch);

// triangulation
EPIFUSE_DEFINE_ERROR(DegenerateSolution);
EPIFUSE_DEFINE_ERROR(InsufficientConfidentViews);
EPIFUSE_DEFINE_ERROR(NoConsensus);

// metrics
EPIFUSE_DEFINE_ERROR(EmptySet);

// synthdata
EPIFUSE_DEFINE_ERROR(TooFewVisibleViews);
EPIFUSE_DEFINE_ERROR(FormatVersionMismatch);
EPIFUSE_DEFINE_ERROR(TruncatedPayload);

// cli
EPIFUSE_DEFINE_ERROR(ConfigInvalid);
EPIFUSE_DEFINE_ERROR(DatasetMissing);
EPIFUSE_DEFINE_ERROR(CheckpointMissing);

#undef EPIFUSE_DEFINE_ERROR

struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(std::size_t step_index)
      : Error("NonFiniteLoss at step " + std::to_string(step_index)),
        step(step_index) {}
  std::size_t step;
};

}  // namespace epifuse
