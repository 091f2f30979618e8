#pragma once

// Orchestration: layered configuration, the three-stage training schedule
// (detector -> offline classifier -> tracker), the online inference dataflow,
// and the reference synthetic stack used by experiments and tests.

#include <functional>
#include <string>
#include <vector>

#include "logo/detector.hpp"
#include "logo/lsc.hpp"
#include "logo/metrics.hpp"
#include "logo/mining.hpp"
#include "logo/synthdata.hpp"
#include "logo/tracker.hpp"

namespace logo::pipe {

struct PipelineConfig {
  det::DetectorConfig detector;
  lsc::LscConfig lsc;
  track::TrackerConfig tracker;
  mine::MiningConfig mining;

  double det_gate = 0.3;      // detector score gate before the classifier
  double fusion_gate = 0.4;   // default profile entry threshold
  double fusion_gate_dense = 0.3;
  double fusion_weight = 0.5;
  double traj_score_thresh = 0.6;
  std::string profile = "default";  // default | dense

  // ablation switches
  bool use_lsc_rescore = true;
  bool use_vpmm = true;
  bool use_glyph = true;
  std::string tracker_kind = "lst";  // lst | bytetrack-style

  uint64_t seed = 1;

  double active_fusion_gate() const {
    return profile == "dense" ? fusion_gate_dense : fusion_gate;
  }
};

PipelineConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const PipelineConfig& cfg);
// Layered load: optional file, then key=value overrides (dotted paths), then
// the LOGO_SEED environment variable.
PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
std::string config_hash(const PipelineConfig& cfg);

struct Checkpoints {
  std::string detector, lsc, tracker;
};

using StageObserver = std::function<void(const std::string& stage, int frame_id)>;

// Online inference over one sequence directory; writes tracks.jsonl and a
// resolved-config sidecar when out_path is non-empty.
std::vector<track::TrackRecord> run_inference(const std::string& video_dir,
                                              const Checkpoints& ckpts, const PipelineConfig& cfg,
                                              const std::string& out_path,
                                              const StageObserver& observer = nullptr);

std::vector<track::TrackRecord> infer_sequence(const synth::Dataset& ds,
                                               const det::DetectorNet& detector,
                                               const lsc::LscNet& classifier,
                                               const track::TrackerModel& tracker,
                                               const PipelineConfig& cfg,
                                               const StageObserver& observer = nullptr);

// stage: detector | lsc | tracker. `data` is the training dataset root for
// detector/tracker and the mined sample archive for lsc. Missing
// prerequisite checkpoints raise errors naming the missing stage.
void run_training(const std::string& stage, const PipelineConfig& cfg, const std::string& data,
                  const Checkpoints& prereq, const std::string& out_ckpt);

// Cached tracker training data built from frozen detector + classifier.
std::vector<track::TrainSequence> build_tracker_training_data(const det::DetectorNet& detector,
                                                              const lsc::LscNet& classifier,
                                                              const PipelineConfig& cfg,
                                                              const std::string& data_dir);

// ---- reference stack ----

struct ReferenceStack {
  std::string root;
  Checkpoints ckpts;
  std::string train_det_dir, mine_dir, eval_clean_dir, occlusion_dir, tracker_train_dir;
  std::vector<std::string> bench_distractor_dirs;  // 3 seeds
  std::vector<std::string> bench_crossing_dirs;    // 3 seeds
  std::string archive_dir;
};

PipelineConfig reference_config();
// Generates datasets and runs the full three-stage schedule into root (only
// when the stamp is missing or stale).
ReferenceStack ensure_reference_stack(const std::string& root);
ReferenceStack build_reference_stack(const std::string& root);  // always fresh
// Dataset generation only (no training); reused by build_reference_stack.
ReferenceStack generate_reference_data(const std::string& root);

}  // namespace logo::pipe
