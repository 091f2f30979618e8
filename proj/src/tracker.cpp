#include "logo/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "logo/assignment.hpp"
#include "logo/common.hpp"

using json = nlohmann::json;

namespace logo::track {

namespace {

std::vector<double> softmax_row(std::vector<double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : logits) v /= z;
  return logits;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

AssignmentDistribution st_match(const std::vector<std::vector<double>>& det_embs,
                                const std::vector<std::vector<double>>& track_embs,
                                double empty_bias) {
  AssignmentDistribution out;
  for (const auto& e : det_embs) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(e.size()));
    std::vector<double> logits;
    logits.reserve(track_embs.size() + 1);
    for (const auto& t : track_embs) {
      require(t.size() == e.size(), "st_match: embedding width mismatch");
      logits.push_back(dot(e, t) * scale);
    }
    logits.push_back(empty_bias);
    out.p.push_back(softmax_row(std::move(logits)));
  }
  return out;
}

AssignmentDistribution lt_match(const std::vector<std::vector<double>>& det_embs,
                                const std::vector<std::vector<std::vector<double>>>& banks,
                                double empty_bias) {
  AssignmentDistribution out;
  for (const auto& e : det_embs) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(e.size()));
    std::vector<double> logits;
    logits.reserve(banks.size() + 1);
    for (const auto& bank : banks) {
      require(!bank.empty(), "lt_match: empty bank");
      double best = -1e300;
      for (const auto& b : bank) {
        require(b.size() == e.size(), "lt_match: embedding width mismatch");
        best = std::max(best, dot(e, b) * scale);
      }
      logits.push_back(best);
    }
    logits.push_back(empty_bias);
    out.p.push_back(softmax_row(std::move(logits)));
  }
  return out;
}

// ---------------- trajectories ----------------

double Trajectory::mean_score() const {
  if (entries.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : entries) acc += e.score;
  return acc / static_cast<double>(entries.size());
}

mine::CharSequence Trajectory::voted_codes(int len_max) const {
  std::vector<int> raw(static_cast<size_t>(len_max), mine::CodeDictionary::kPadClass);
  for (int pos = 0; pos < len_max; ++pos) {
    std::map<int, int> votes;
    for (const auto& e : entries) {
      if (static_cast<int>(e.rec.codes.size()) != len_max) continue;
      votes[e.rec.codes[static_cast<size_t>(pos)]]++;
    }
    if (votes.empty()) continue;
    int best_code = mine::CodeDictionary::kPadClass, best_count = -1;
    for (const auto& [code, count] : votes)
      if (count > best_count) {  // ties: smaller code wins (map order)
        best_code = code;
        best_count = count;
      }
    raw[static_cast<size_t>(pos)] = best_code;
  }
  return mine::canonicalize_codes(raw, len_max);
}

double TrackRecord::mean_score() const {
  if (frames.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& f : frames) acc += f.score;
  return acc / static_cast<double>(frames.size());
}

TrackRecord to_record(const Trajectory& traj, int len_max) {
  TrackRecord r;
  r.track_id = traj.track_id;
  r.word = mine::decode_word(traj.voted_codes(len_max));
  for (const auto& e : traj.entries) r.frames.push_back({e.frame_id, e.det.quad, e.score});
  return r;
}

void write_tracks_jsonl(const std::string& path, const std::vector<TrackRecord>& tracks) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "write_tracks_jsonl: cannot open " + path);
  for (const auto& t : tracks) {
    json j;
    j["track_id"] = t.track_id;
    j["word"] = t.word;
    json frames = json::array();
    for (const auto& f : t.frames) {
      json fj;
      fj["frame_id"] = f.frame_id;
      json quad = json::array();
      for (const auto& v : f.quad.v) {
        quad.push_back(v.x);
        quad.push_back(v.y);
      }
      fj["quad"] = quad;
      fj["score"] = f.score;
      frames.push_back(fj);
    }
    j["frames"] = frames;
    os << j.dump() << "\n";
  }
}

std::vector<TrackRecord> read_tracks_jsonl(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "read_tracks_jsonl: cannot open " + path);
  std::vector<TrackRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      TrackRecord t;
      t.track_id = j.at("track_id").get<int>();
      t.word = j.at("word").get<std::string>();
      for (const auto& fj : j.at("frames")) {
        TrackRecord::Frame f;
        f.frame_id = fj.at("frame_id").get<int>();
        const auto& q = fj.at("quad");
        for (int i = 0; i < 4; ++i)
          f.quad.v[static_cast<size_t>(i)] = {q[static_cast<size_t>(2 * i)].get<double>(),
                                              q[static_cast<size_t>(2 * i + 1)].get<double>()};
        f.score = fj.at("score").get<double>();
        t.frames.push_back(std::move(f));
      }
      out.push_back(std::move(t));
    } catch (const std::exception& ex) {
      throw std::runtime_error("read_tracks_jsonl: parse error at line " + std::to_string(lineno) +
                               ": " + ex.what());
    }
  }
  return out;
}

std::vector<TrackRecord> filter_trajectories(std::vector<TrackRecord> tracks, Profile profile,
                                             Task task, double score_thresh) {
  if (profile == Profile::kDefault) return tracks;
  std::vector<TrackRecord> out;
  for (auto& t : tracks) {
    if (t.mean_score() < score_thresh) continue;  // boundary inclusive-keep
    if (task == Task::kSpot && t.word.size() <= 1) continue;  // background or single char
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------- model ----------------

TrackerModel::TrackerModel(const TrackerConfig& cfg)
    : cfg_(cfg), vpmm_(vpmm::VpmmConfig{cfg.c, cfg.d, cfg.use_position}, params_) {
  Rng rng(cfg_.seed);
  vpmm_.init(rng);
  params_.declare("st_bias", nn::Tensor::scalar(0.0));
  params_.declare("lt_bias", nn::Tensor::scalar(0.0));
}

double TrackerModel::st_bias() const { return params_.get("st_bias")[0]; }
double TrackerModel::lt_bias() const { return params_.get("lt_bias")[0]; }

std::vector<double> TrackerModel::embed(const nn::Tensor& p_norm, const nn::Tensor& f_vis) const {
  require(p_norm.ndim() == 2 && f_vis.ndim() == 2, "embed: expect [c,2] and [c,d]");
  nn::Tensor p({1, cfg_.c, 2}, p_norm.vec());
  nn::Tensor f({1, cfg_.c, cfg_.d}, f_vis.vec());
  nn::Tensor out = vpmm_.fuse(p, f);
  return out.vec();
}

nn::Val TrackerModel::build_asso_loss(nn::Tape& tape, nn::GraphParams& P,
                                      const TrainSequence& seq) const {
  const int T = static_cast<int>(seq.size());
  require(T >= 2, "build_asso_loss: need at least 2 frames");
  const int emb_w = cfg_.emb_dim();

  // embed every instance of the sequence in one fuse pass
  int n_total = 0;
  for (const auto& f : seq) n_total += static_cast<int>(f.size());
  require(n_total > 0, "build_asso_loss: empty sequence");
  nn::Tensor p_all({n_total, cfg_.c, 2});
  nn::Tensor f_all({n_total, cfg_.c, cfg_.d});
  std::vector<std::vector<int>> row_of(static_cast<size_t>(T));
  {
    int row = 0;
    const int64_t pstride = static_cast<int64_t>(cfg_.c) * 2;
    const int64_t fstride = static_cast<int64_t>(cfg_.c) * cfg_.d;
    for (int t = 0; t < T; ++t)
      for (const auto& inst : seq[static_cast<size_t>(t)]) {
        std::copy(inst.p_norm.vec().begin(), inst.p_norm.vec().end(),
                  p_all.vec().begin() + row * pstride);
        std::copy(inst.f_vis.vec().begin(), inst.f_vis.vec().end(),
                  f_all.vec().begin() + row * fstride);
        row_of[static_cast<size_t>(t)].push_back(row);
        ++row;
      }
  }
  nn::Val embs = vpmm_.fuse_graph(tape, P, tape.constant(std::move(p_all)),
                                  tape.constant(std::move(f_all)));  // [n_total, emb_w]

  const double scale = 1.0 / std::sqrt(static_cast<double>(emb_w));
  nn::Val total = tape.constant(nn::Tensor::scalar(0.0));
  bool any_term = false;

  // long-term banks: identity -> rows of its appearances before frame t
  std::map<int, std::vector<int>> history;

  for (int t = 0; t < T; ++t) {
    const SeqFrame& frame = seq[static_cast<size_t>(t)];
    if (t >= 1 && !frame.empty()) {
      // ---- short-term: candidates are identities present at t-1 ----
      std::vector<int> cand_rows;
      std::vector<int> cand_ids;
      const SeqFrame& prev = seq[static_cast<size_t>(t - 1)];
      for (size_t i = 0; i < prev.size(); ++i)
        if (prev[i].identity >= 0) {
          cand_rows.push_back(row_of[static_cast<size_t>(t - 1)][i]);
          cand_ids.push_back(prev[i].identity);
        }
      if (!cand_rows.empty() || cfg_.use_bg_terms) {
        std::vector<int> det_rows;
        std::vector<int> targets;
        std::vector<double> weights;
        for (size_t i = 0; i < frame.size(); ++i) {
          const int id = frame[i].identity;
          int target = -1;
          if (id >= 0) {
            for (size_t k = 0; k < cand_ids.size(); ++k)
              if (cand_ids[k] == id) target = static_cast<int>(k);
            if (target < 0) continue;  // identity absent at t-1: no ST term
          } else {
            if (!cfg_.use_bg_terms) continue;
            target = static_cast<int>(cand_rows.size());  // empty column
          }
          det_rows.push_back(row_of[static_cast<size_t>(t)][i]);
          targets.push_back(target);
          weights.push_back(1.0);
        }
        if (!det_rows.empty()) {
          nn::Val dets = tape.gather_batch(embs, det_rows);
          nn::Val logits;
          if (!cand_rows.empty()) {
            nn::Val tracks = tape.gather_batch(embs, cand_rows);
            logits = tape.scale(tape.matmul(dets, tracks, false, true), scale);
            logits = tape.append_col(logits, P("st_bias"));
          } else {
            // only the empty option: logits [m,1] of the bias
            nn::Val zeros = tape.constant(nn::Tensor({static_cast<int>(det_rows.size()), 0}));
            logits = tape.append_col(zeros, P("st_bias"));
          }
          nn::Val nll = tape.ce_rows(logits, targets, weights);
          total = tape.add(total, tape.scale(nll, static_cast<double>(det_rows.size())));
          any_term = true;
        }
      }

      // ---- long-term: candidates are identities with a non-empty bank ----
      if (cfg_.use_lt) {
        std::vector<std::pair<int, int>> segs;  // column ranges per candidate
        std::vector<int> bank_rows;
        std::vector<int> bank_ids;
        for (const auto& [id, rows] : history) {
          const int begin = static_cast<int>(bank_rows.size());
          const int take = std::min<int>(cfg_.bank_cap, static_cast<int>(rows.size()));
          for (int k = static_cast<int>(rows.size()) - take; k < static_cast<int>(rows.size()); ++k)
            bank_rows.push_back(rows[static_cast<size_t>(k)]);
          segs.emplace_back(begin, static_cast<int>(bank_rows.size()));
          bank_ids.push_back(id);
        }
        if (!bank_rows.empty()) {
          std::vector<int> det_rows;
          std::vector<int> targets;
          std::vector<double> weights;
          for (size_t i = 0; i < frame.size(); ++i) {
            const int id = frame[i].identity;
            int target = -1;
            if (id >= 0) {
              for (size_t k = 0; k < bank_ids.size(); ++k)
                if (bank_ids[k] == id) target = static_cast<int>(k);
              if (target < 0) continue;
            } else {
              if (!cfg_.use_bg_terms) continue;
              target = static_cast<int>(bank_ids.size());
            }
            det_rows.push_back(row_of[static_cast<size_t>(t)][i]);
            targets.push_back(target);
            weights.push_back(1.0);
          }
          if (!det_rows.empty()) {
            nn::Val dets = tape.gather_batch(embs, det_rows);
            nn::Val banks = tape.gather_batch(embs, bank_rows);
            nn::Val full = tape.scale(tape.matmul(dets, banks, false, true), scale);
            nn::Val logits = tape.append_col(tape.segment_colmax(full, segs), P("lt_bias"));
            nn::Val nll = tape.ce_rows(logits, targets, weights);
            total = tape.add(total, tape.scale(nll, static_cast<double>(det_rows.size())));
            any_term = true;
          }
        }
      }
    }

    for (size_t i = 0; i < frame.size(); ++i)
      if (frame[i].identity >= 0)
        history[frame[i].identity].push_back(row_of[static_cast<size_t>(t)][i]);
  }
  require(any_term, "build_asso_loss: sequence produced no loss terms");
  return total;
}

double TrackerModel::loss_asso(const TrainSequence& seq) const {
  nn::Tape tape;
  auto& self = const_cast<TrackerModel&>(*this);
  nn::GraphParams P(tape, self.params_, false);
  return tape.val(build_asso_loss(tape, P, seq)).item();
}

double TrackerModel::train_step(const TrainSequence& seq) {
  nn::Tape tape;
  nn::GraphParams P(tape, params_, true);
  nn::Val loss = build_asso_loss(tape, P, seq);
  const double v = tape.val(loss).item();
  tape.backward(loss);
  P.apply_adam(cfg_.lr);
  return v;
}

namespace {

json tracker_config_to_json(const TrackerConfig& c) {
  json j;
  j["bank_cap"] = c.bank_cap;
  j["p_assoc"] = c.p_assoc;
  j["t_lost"] = c.t_lost;
  j["c"] = c.c;
  j["d"] = c.d;
  j["use_position"] = c.use_position;
  j["use_lt"] = c.use_lt;
  j["use_bg_terms"] = c.use_bg_terms;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  return j;
}

TrackerConfig tracker_config_from_json(const json& j) {
  TrackerConfig c;
  c.bank_cap = j.value("bank_cap", c.bank_cap);
  c.p_assoc = j.value("p_assoc", c.p_assoc);
  c.t_lost = j.value("t_lost", c.t_lost);
  c.c = j.value("c", c.c);
  c.d = j.value("d", c.d);
  c.use_position = j.value("use_position", c.use_position);
  c.use_lt = j.value("use_lt", c.use_lt);
  c.use_bg_terms = j.value("use_bg_terms", c.use_bg_terms);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

void TrackerModel::save(const std::string& path, const std::string& config_hash) const {
  nn::CheckpointHeader h;
  h.module = "tracker";
  h.config_hash = config_hash;
  h.step = params_.step();
  h.extra_json = tracker_config_to_json(cfg_).dump();
  nn::save_checkpoint(path, params_, h);
}

TrackerModel TrackerModel::load(const std::string& path) {
  nn::ParamStore store;
  nn::CheckpointHeader h = nn::load_checkpoint(path, store);
  require(h.module == "tracker", "load: checkpoint is not a tracker (module=" + h.module + ")");
  TrackerModel model(tracker_config_from_json(json::parse(h.extra_json)));
  nn::load_checkpoint(path, model.params_);
  model.params_.set_step(h.step);
  return model;
}

TrackerModel train_tracker(const TrackerConfig& cfg, const std::vector<TrainSequence>& seqs,
                           std::vector<double>* loss_curve) {
  require(!seqs.empty(), "train_tracker: no sequences");
  TrackerModel model(cfg);
  Rng rng(cfg.seed ^ 0x7acceULL);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto& seq = seqs[static_cast<size_t>(rng.uniform_int(static_cast<int>(seqs.size())))];
    const double loss = model.train_step(seq);
    if (loss_curve) loss_curve->push_back(loss);
  }
  return model;
}

// ---------------- online state ----------------

TrackerState::TrackerState(const TrackerModel& model, const TrackerConfig& cfg)
    : model_(&model), cfg_(cfg) {}

void TrackerState::commit_match(Live& track, int frame_id, const TrackedInstance& inst) {
  track.traj.entries.push_back({frame_id, inst.det, inst.det.score, inst.rec});
  track.e_short = inst.emb;
  track.bank.push_back(inst.emb);
  while (static_cast<int>(track.bank.size()) > cfg_.bank_cap) track.bank.pop_front();
  track.frames_since_match = 0;
  track.last_matched_frame = frame_id;
}

void TrackerState::step(int frame_id, const std::vector<TrackedInstance>& instances) {
  std::vector<char> det_matched(instances.size(), 0);
  std::vector<char> track_matched(live_.size(), 0);

  if (!instances.empty() && !live_.empty()) {
    // short-term: tracks matched at the previous frame
    std::vector<size_t> st_pool;
    for (size_t k = 0; k < live_.size(); ++k)
      if (live_[k].last_matched_frame == frame_id - 1) st_pool.push_back(k);
    if (!st_pool.empty()) {
      std::vector<std::vector<double>> det_embs, trk_embs;
      for (const auto& inst : instances) det_embs.push_back(inst.emb);
      for (size_t k : st_pool) trk_embs.push_back(live_[k].e_short);
      const AssignmentDistribution P = st_match(det_embs, trk_embs, model_->st_bias());
      std::vector<std::vector<double>> cost(instances.size(),
                                            std::vector<double>(st_pool.size(), 0.0));
      std::vector<double> skip(instances.size());
      for (size_t i = 0; i < instances.size(); ++i) {
        for (size_t k = 0; k < st_pool.size(); ++k)
          cost[i][k] = -std::log(std::max(P.p[i][k], 1e-300));
        skip[i] = -std::log(std::max(P.p[i][st_pool.size()], 1e-300));
      }
      // per-row skip costs differ; fold them by solving with the max skip and
      // rejecting below-threshold pairs afterwards
      double max_skip = 0.0;
      for (double s : skip) max_skip = std::max(max_skip, s);
      const std::vector<int> assign = assign_with_skip(cost, max_skip);
      for (size_t i = 0; i < instances.size(); ++i) {
        const int k = assign[i];
        if (k < 0) continue;
        if (P.p[i][static_cast<size_t>(k)] < cfg_.p_assoc) continue;
        det_matched[i] = 1;
        track_matched[st_pool[static_cast<size_t>(k)]] = 1;
        commit_match(live_[st_pool[static_cast<size_t>(k)]], frame_id, instances[i]);
      }
    }

    // long-term: remaining detections against banked tracks
    if (cfg_.use_lt) {
      std::vector<size_t> lt_pool;
      for (size_t k = 0; k < live_.size(); ++k)
        if (!track_matched[k] && !live_[k].bank.empty()) lt_pool.push_back(k);
      std::vector<size_t> det_left;
      for (size_t i = 0; i < instances.size(); ++i)
        if (!det_matched[i]) det_left.push_back(i);
      if (!lt_pool.empty() && !det_left.empty()) {
        std::vector<std::vector<double>> det_embs;
        std::vector<std::vector<std::vector<double>>> banks;
        for (size_t i : det_left) det_embs.push_back(instances[i].emb);
        for (size_t k : lt_pool)
          banks.emplace_back(live_[k].bank.begin(), live_[k].bank.end());
        const AssignmentDistribution P = lt_match(det_embs, banks, model_->lt_bias());
        std::vector<std::vector<double>> cost(det_left.size(),
                                              std::vector<double>(lt_pool.size(), 0.0));
        double max_skip = 0.0;
        for (size_t i = 0; i < det_left.size(); ++i) {
          for (size_t k = 0; k < lt_pool.size(); ++k)
            cost[i][k] = -std::log(std::max(P.p[i][k], 1e-300));
          max_skip = std::max(max_skip, -std::log(std::max(P.p[i][lt_pool.size()], 1e-300)));
        }
        const std::vector<int> assign = assign_with_skip(cost, max_skip);
        for (size_t i = 0; i < det_left.size(); ++i) {
          const int k = assign[i];
          if (k < 0) continue;
          if (P.p[i][static_cast<size_t>(k)] < cfg_.p_assoc) continue;
          det_matched[det_left[i]] = 1;
          track_matched[lt_pool[static_cast<size_t>(k)]] = 1;
          commit_match(live_[lt_pool[static_cast<size_t>(k)]], frame_id, instances[det_left[i]]);
        }
      }
    }
  }

  // unmatched detections spawn new tracks in detection order
  for (size_t i = 0; i < instances.size(); ++i) {
    if (det_matched[i]) continue;
    Live t;
    t.traj.track_id = next_id_++;
    commit_match(t, frame_id, instances[i]);
    live_.push_back(std::move(t));
    track_matched.push_back(1);
  }

  // age out stale tracks
  std::vector<Live> kept;
  for (size_t k = 0; k < live_.size(); ++k) {
    if (!track_matched[k]) {
      live_[k].frames_since_match++;
      if (live_[k].frames_since_match >= cfg_.t_lost) {
        finished_.push_back(std::move(live_[k].traj));
        continue;
      }
    }
    kept.push_back(std::move(live_[k]));
  }
  live_ = std::move(kept);
}

void TrackerState::finalize() {
  for (auto& t : live_) finished_.push_back(std::move(t.traj));
  live_.clear();
}

std::vector<Trajectory> TrackerState::trajectories() const {
  std::vector<Trajectory> out = finished_;
  for (const auto& t : live_) out.push_back(t.traj);
  std::sort(out.begin(), out.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.track_id < b.track_id; });
  return out;
}

}  // namespace logo::track
