#pragma once

// Short/long-term embedding matcher: per-frame association of fusion-scored
// detections over VPMM embeddings, trajectory lifecycle, the association
// losses used to train the fusion module jointly, and inference-time
// trajectory filtering.

#include <deque>
#include <string>
#include <vector>

#include "logo/mining.hpp"
#include "logo/nn.hpp"
#include "logo/types.hpp"
#include "logo/vpmm.hpp"

namespace logo::track {

struct TrackerConfig {
  int bank_cap = 8;       // long-term bank size W
  double p_assoc = 0.5;   // acceptance probability
  int t_lost = 30;        // frames without a match before termination
  int c = 26, d = 32;     // embedding geometry; embeddings are 2d wide
  bool use_position = true;
  bool use_lt = true;
  bool use_bg_terms = true;
  double lr = 1e-3;
  int steps = 300;
  uint64_t seed = 13;
  int emb_dim() const { return 2 * d; }
};

// Per-detection probability rows over (candidate tracks ... , empty).
struct AssignmentDistribution {
  std::vector<std::vector<double>> p;
};

// logit(det, track) = <emb, e_track>/sqrt(emb_dim); empty option is a bias.
AssignmentDistribution st_match(const std::vector<std::vector<double>>& det_embs,
                                const std::vector<std::vector<double>>& track_embs,
                                double empty_bias);
// Track logit = max over that track's bank entries of the scaled dot product.
AssignmentDistribution lt_match(const std::vector<std::vector<double>>& det_embs,
                                const std::vector<std::vector<std::vector<double>>>& banks,
                                double empty_bias);

// One instance entering the tracker at a frame.
struct TrackedInstance {
  Detection det;                // already fusion-scored
  std::vector<double> emb;      // emb_dim wide
  mine::CharSequence rec;       // canonical per-frame recognition
};

struct TrackEntry {
  int frame_id = 0;
  Detection det;
  double score = 0.0;
  mine::CharSequence rec;
};

struct Trajectory {
  int track_id = -1;
  std::vector<TrackEntry> entries;
  double mean_score() const;
  // per-position majority vote over per-frame recognitions, canonicalized
  mine::CharSequence voted_codes(int len_max) const;
};

// Serialized trajectory (tracks.jsonl line).
struct TrackRecord {
  int track_id = -1;
  std::string word;
  struct Frame {
    int frame_id = 0;
    geom::RotatedQuad quad;
    double score = 0.0;
  };
  std::vector<Frame> frames;
  double mean_score() const;
};

TrackRecord to_record(const Trajectory& traj, int len_max);
void write_tracks_jsonl(const std::string& path, const std::vector<TrackRecord>& tracks);
std::vector<TrackRecord> read_tracks_jsonl(const std::string& path);

enum class Profile { kDefault, kDense };
enum class Task { kTrack, kSpot };

// Default profile passes through. Dense drops trajectories with mean score
// below the threshold (boundary kept) and, for the spotting task, also those
// whose voted recognition is background or a single character.
std::vector<TrackRecord> filter_trajectories(std::vector<TrackRecord> tracks, Profile profile,
                                             Task task, double score_thresh = 0.6);

// ---- training ----

// Cached instance of a training sequence frame: VPMM inputs plus the ground
// truth identity (-1 for background detections).
struct SeqInstance {
  nn::Tensor p_norm;  // [c,2]
  nn::Tensor f_vis;   // [c,d]
  int identity = -1;
};
using SeqFrame = std::vector<SeqInstance>;
using TrainSequence = std::vector<SeqFrame>;

class TrackerModel {
 public:
  explicit TrackerModel(const TrackerConfig& cfg);

  // Sum of the short/long assignment NLL terms plus the background terms.
  nn::Val build_asso_loss(nn::Tape& tape, nn::GraphParams& P, const TrainSequence& seq) const;
  double loss_asso(const TrainSequence& seq) const;
  double train_step(const TrainSequence& seq);

  std::vector<double> embed(const nn::Tensor& p_norm, const nn::Tensor& f_vis) const;
  double st_bias() const;
  double lt_bias() const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const TrackerConfig& config() const { return cfg_; }
  const vpmm::VpmmNet& fusion() const { return vpmm_; }

  void save(const std::string& path, const std::string& config_hash) const;
  static TrackerModel load(const std::string& path);

 private:
  TrackerConfig cfg_;
  nn::ParamStore params_;
  vpmm::VpmmNet vpmm_;
};

TrackerModel train_tracker(const TrackerConfig& cfg, const std::vector<TrainSequence>& seqs,
                           std::vector<double>* loss_curve = nullptr);

// ---- online state ----

class TrackerState {
 public:
  TrackerState(const TrackerModel& model, const TrackerConfig& cfg);

  // Hungarian on -log P from the short-term matcher (previous-frame tracks),
  // leftovers retried long-term, leftovers spawn tracks; unmatched tracks
  // age out after t_lost frames.
  void step(int frame_id, const std::vector<TrackedInstance>& instances);
  void finalize();
  std::vector<Trajectory> trajectories() const;  // finished + live, by id

 private:
  struct Live {
    Trajectory traj;
    std::vector<double> e_short;
    std::deque<std::vector<double>> bank;
    int last_matched_frame = -1;
    int frames_since_match = 0;
  };
  const TrackerModel* model_;
  TrackerConfig cfg_;
  std::vector<Live> live_;
  std::vector<Trajectory> finished_;
  int next_id_ = 0;

  void commit_match(Live& track, int frame_id, const TrackedInstance& inst);
};

}  // namespace logo::track
