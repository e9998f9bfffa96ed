#pragma once

#include "maskprop/volume.hpp"

namespace maskprop {

// Non-learning comparators. Both take a mask volume whose annotated slices
// hold expert labels (everything else is ignored) plus the schedule saying
// which slices those are.

// Every slice copies the nearest annotated slice; ties go to the lower index.
MaskVolume zero_order_propagate(const MaskVolume& annotated, const AnnotationSchedule& schedule);

struct FillBetweenResult {
  MaskVolume mask;
  bool fell_back_to_zero_order = false;  // set when fewer than 2 annotations exist
};

// Between consecutive annotated slices, intermediate masks are the zero
// superlevel set of linearly interpolated signed distance transforms
// (positive inside); outside the annotated range the nearest annotation is
// copied.
FillBetweenResult fill_between_slices(const MaskVolume& annotated,
                                      const AnnotationSchedule& schedule);

}  // namespace maskprop
