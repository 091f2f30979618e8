#pragma once

// Evaluation engine: detection precision/recall/F-measure with per-frame
// assignment, CLEAR-style multi-object tracking metrics (MOTA, MOTP, identity
// switches) with match carry-over, global identity F1, mostly-tracked /
// mostly-lost, and the end-to-end spotting flavor that additionally requires
// transcription equality.

#include <optional>
#include <vector>

#include "logo/tracker.hpp"
#include "logo/types.hpp"

namespace logo::metrics {

struct DetectionPRF {
  double precision = 1.0, recall = 1.0, f_measure = 1.0;
  long tp = 0, fp = 0, fn = 0;
};

struct MetricsReport {
  double precision = 1.0, recall = 1.0, f_measure = 1.0;
  double mota = 1.0;                // may be negative
  std::optional<double> motp;       // mean matched IoU; absent without matches
  double idf1 = 1.0;
  double m_tracked = 0.0, m_lost = 0.0;  // percentages of gt trajectories
  long tp = 0, fp = 0, fn = 0, id_switches = 0;
  long gt_boxes = 0;
  int gt_trajectories = 0;
};

// Per-frame Hungarian matching at IoU >= iou_thresh, maximizing match count
// then total IoU. Empty-vs-empty frames are vacuous successes (P=R=F=1);
// zero predictions against ground truth keep P=1 by convention.
DetectionPRF eval_detection(const std::vector<std::vector<Detection>>& preds_per_frame,
                            const std::vector<FrameAnnotation>& gts, double iou_thresh = 0.5);

// Tracking flavor: geometric matches only.
MetricsReport eval_mot(const std::vector<track::TrackRecord>& tracks,
                       const std::vector<FrameAnnotation>& gts, double iou_thresh = 0.5);

// Spotting flavor: a match additionally requires case-insensitive word
// equality between the trajectory word and the instance transcription.
MetricsReport eval_spotting(const std::vector<track::TrackRecord>& tracks,
                            const std::vector<FrameAnnotation>& gts, double iou_thresh = 0.5);

}  // namespace logo::metrics
