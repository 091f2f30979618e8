#include "logo/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "logo/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace logo::pipe {

namespace {

json config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["det_gate"] = c.det_gate;
  j["fusion_gate"] = c.fusion_gate;
  j["fusion_gate_dense"] = c.fusion_gate_dense;
  j["fusion_weight"] = c.fusion_weight;
  j["traj_score_thresh"] = c.traj_score_thresh;
  j["profile"] = c.profile;
  j["use_lsc_rescore"] = c.use_lsc_rescore;
  j["use_vpmm"] = c.use_vpmm;
  j["use_glyph"] = c.use_glyph;
  j["tracker_kind"] = c.tracker_kind;

  json d;
  d["in_h"] = c.detector.in_h;
  d["in_w"] = c.detector.in_w;
  d["stride"] = c.detector.stride;
  d["ch1"] = c.detector.ch1;
  d["ch2"] = c.detector.ch2;
  d["ch3"] = c.detector.ch3;
  d["trunk_ch"] = c.detector.trunk_ch;
  d["n_bins"] = c.detector.n_bins;
  d["alpha"] = c.detector.alpha;
  d["beta"] = c.detector.beta;
  d["gamma"] = c.detector.gamma;
  d["alpha_f"] = c.detector.alpha_f;
  d["gamma_f"] = c.detector.gamma_f;
  d["lr"] = c.detector.lr;
  d["steps"] = c.detector.steps;
  d["batch"] = c.detector.batch;
  d["seed"] = c.detector.seed;
  d["score_thresh"] = c.detector.score_thresh;
  d["nms_iou"] = c.detector.nms_iou;
  j["detector"] = d;

  json l;
  l["patch_w"] = c.lsc.patch_w;
  l["patch_h"] = c.lsc.patch_h;
  l["c"] = c.lsc.c;
  l["d"] = c.lsc.d;
  l["e0"] = c.lsc.e0;
  l["e1"] = c.lsc.e1;
  l["e2"] = c.lsc.e2;
  l["e3"] = c.lsc.e3;
  l["M"] = c.lsc.M;
  l["lambda_v"] = c.lsc.lambda_v;
  l["lambda_l"] = c.lsc.lambda_l;
  l["seg_loss"] = c.lsc.seg_loss == lsc::SegLossKind::kMse ? "mse" : "bce";
  l["lr"] = c.lsc.lr;
  l["steps"] = c.lsc.steps;
  l["batch"] = c.lsc.batch;
  l["seed"] = c.lsc.seed;
  j["lsc"] = l;

  json t;
  t["bank_cap"] = c.tracker.bank_cap;
  t["p_assoc"] = c.tracker.p_assoc;
  t["t_lost"] = c.tracker.t_lost;
  t["use_lt"] = c.tracker.use_lt;
  t["use_bg_terms"] = c.tracker.use_bg_terms;
  t["lr"] = c.tracker.lr;
  t["steps"] = c.tracker.steps;
  t["seed"] = c.tracker.seed;
  j["tracker"] = t;

  json m;
  m["h_iou"] = c.mining.h_iou;
  m["h_score"] = c.mining.h_score;
  m["neg_cap_per_frame"] = c.mining.neg_cap_per_frame;
  m["seed"] = c.mining.seed;
  j["mining"] = m;
  return j;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.det_gate = j.value("det_gate", c.det_gate);
  c.fusion_gate = j.value("fusion_gate", c.fusion_gate);
  c.fusion_gate_dense = j.value("fusion_gate_dense", c.fusion_gate_dense);
  c.fusion_weight = j.value("fusion_weight", c.fusion_weight);
  c.traj_score_thresh = j.value("traj_score_thresh", c.traj_score_thresh);
  c.profile = j.value("profile", c.profile);
  c.use_lsc_rescore = j.value("use_lsc_rescore", c.use_lsc_rescore);
  c.use_vpmm = j.value("use_vpmm", c.use_vpmm);
  c.use_glyph = j.value("use_glyph", c.use_glyph);
  c.tracker_kind = j.value("tracker_kind", c.tracker_kind);

  const json d = j.value("detector", json::object());
  c.detector.in_h = d.value("in_h", c.detector.in_h);
  c.detector.in_w = d.value("in_w", c.detector.in_w);
  c.detector.stride = d.value("stride", c.detector.stride);
  c.detector.ch1 = d.value("ch1", c.detector.ch1);
  c.detector.ch2 = d.value("ch2", c.detector.ch2);
  c.detector.ch3 = d.value("ch3", c.detector.ch3);
  c.detector.trunk_ch = d.value("trunk_ch", c.detector.trunk_ch);
  c.detector.n_bins = d.value("n_bins", c.detector.n_bins);
  c.detector.alpha = d.value("alpha", c.detector.alpha);
  c.detector.beta = d.value("beta", c.detector.beta);
  c.detector.gamma = d.value("gamma", c.detector.gamma);
  c.detector.alpha_f = d.value("alpha_f", c.detector.alpha_f);
  c.detector.gamma_f = d.value("gamma_f", c.detector.gamma_f);
  c.detector.lr = d.value("lr", c.detector.lr);
  c.detector.steps = d.value("steps", c.detector.steps);
  c.detector.batch = d.value("batch", c.detector.batch);
  c.detector.score_thresh = d.value("score_thresh", c.detector.score_thresh);
  c.detector.nms_iou = d.value("nms_iou", c.detector.nms_iou);

  const json l = j.value("lsc", json::object());
  c.lsc.patch_w = l.value("patch_w", c.lsc.patch_w);
  c.lsc.patch_h = l.value("patch_h", c.lsc.patch_h);
  c.lsc.c = l.value("c", c.lsc.c);
  c.lsc.d = l.value("d", c.lsc.d);
  c.lsc.e0 = l.value("e0", c.lsc.e0);
  c.lsc.e1 = l.value("e1", c.lsc.e1);
  c.lsc.e2 = l.value("e2", c.lsc.e2);
  c.lsc.e3 = l.value("e3", c.lsc.e3);
  c.lsc.M = l.value("M", c.lsc.M);
  c.lsc.lambda_v = l.value("lambda_v", c.lsc.lambda_v);
  c.lsc.lambda_l = l.value("lambda_l", c.lsc.lambda_l);
  c.lsc.seg_loss = l.value("seg_loss", "mse") == std::string("bce") ? lsc::SegLossKind::kBce
                                                                    : lsc::SegLossKind::kMse;
  c.lsc.lr = l.value("lr", c.lsc.lr);
  c.lsc.steps = l.value("steps", c.lsc.steps);
  c.lsc.batch = l.value("batch", c.lsc.batch);

  const json t = j.value("tracker", json::object());
  c.tracker.bank_cap = t.value("bank_cap", c.tracker.bank_cap);
  c.tracker.p_assoc = t.value("p_assoc", c.tracker.p_assoc);
  c.tracker.t_lost = t.value("t_lost", c.tracker.t_lost);
  c.tracker.use_lt = t.value("use_lt", c.tracker.use_lt);
  c.tracker.use_bg_terms = t.value("use_bg_terms", c.tracker.use_bg_terms);
  c.tracker.lr = t.value("lr", c.tracker.lr);
  c.tracker.steps = t.value("steps", c.tracker.steps);

  const json m = j.value("mining", json::object());
  c.mining.h_iou = m.value("h_iou", c.mining.h_iou);
  c.mining.h_score = m.value("h_score", c.mining.h_score);
  c.mining.neg_cap_per_frame = m.value("neg_cap_per_frame", c.mining.neg_cap_per_frame);

  // module seeds derive from the pipeline seed unless given explicitly
  c.detector.seed = d.contains("seed") ? d["seed"].get<uint64_t>() : c.seed * 2654435761ULL + 1;
  c.lsc.seed = l.contains("seed") ? l["seed"].get<uint64_t>() : c.seed * 2654435761ULL + 2;
  c.tracker.seed = t.contains("seed") ? t["seed"].get<uint64_t>() : c.seed * 2654435761ULL + 3;
  c.mining.seed = m.contains("seed") ? m["seed"].get<uint64_t>() : c.seed * 2654435761ULL + 4;

  // keep the fusion geometry aligned with the classifier
  c.tracker.c = c.lsc.c;
  c.tracker.d = c.lsc.d;
  c.tracker.use_position = c.use_vpmm;
  c.lsc.use_glyph = c.use_glyph;
  c.mining.patch_w = c.lsc.patch_w;
  c.mining.patch_h = c.lsc.patch_h;
  return c;
}

}  // namespace

PipelineConfig config_from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

std::string config_to_json_text(const PipelineConfig& cfg) { return config_to_json(cfg).dump(2); }

PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    require(static_cast<bool>(is), "load_config: cannot open " + path);
    j = json::parse(is);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, "override must be key=value: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(val);
    } catch (...) {
      parsed = val;  // plain string
    }
    json* cur = &j;
    size_t pos = 0;
    while (true) {
      const size_t dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
      if (dot == std::string::npos) {
        (*cur)[part] = parsed;
        break;
      }
      cur = &(*cur)[part];
      pos = dot + 1;
    }
  }
  if (const char* env = std::getenv("LOGO_SEED")) j["seed"] = std::strtoull(env, nullptr, 10);
  return config_from_json(j);
}

std::string config_hash(const PipelineConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  const uint64_t h = fnv1a(dump.data(), dump.size());
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------- inference ----------------

namespace {

struct Prepared {
  track::TrackedInstance inst;
  double det_score = 0.0;
  int lang = 0;
};

std::vector<track::TrackRecord> greedy_iou_track(
    const std::vector<std::vector<track::TrackedInstance>>& frames, int len_max, int t_lost) {
  struct Live {
    track::Trajectory traj;
    geom::RotatedQuad last_quad;
    int misses = 0;
  };
  std::vector<Live> live;
  std::vector<track::Trajectory> done;
  int next_id = 0;
  for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
    const auto& dets = frames[static_cast<size_t>(f)];
    std::vector<char> det_used(dets.size(), 0), trk_used(live.size(), 0);
    // greedy by descending IoU
    while (true) {
      double best = 0.3;
      int bi = -1, bk = -1;
      for (size_t i = 0; i < dets.size(); ++i) {
        if (det_used[i]) continue;
        for (size_t k = 0; k < live.size(); ++k) {
          if (trk_used[k]) continue;
          const double v = geom::iou_rotated(dets[i].det.quad, live[k].last_quad);
          if (v > best) {
            best = v;
            bi = static_cast<int>(i);
            bk = static_cast<int>(k);
          }
        }
      }
      if (bi < 0) break;
      det_used[static_cast<size_t>(bi)] = 1;
      trk_used[static_cast<size_t>(bk)] = 1;
      Live& t = live[static_cast<size_t>(bk)];
      t.traj.entries.push_back({f, dets[static_cast<size_t>(bi)].det,
                                dets[static_cast<size_t>(bi)].det.score,
                                dets[static_cast<size_t>(bi)].rec});
      t.last_quad = dets[static_cast<size_t>(bi)].det.quad;
      t.misses = 0;
    }
    for (size_t i = 0; i < dets.size(); ++i) {
      if (det_used[i]) continue;
      Live t;
      t.traj.track_id = next_id++;
      t.traj.entries.push_back({f, dets[i].det, dets[i].det.score, dets[i].rec});
      t.last_quad = dets[i].det.quad;
      live.push_back(std::move(t));
      trk_used.push_back(1);
    }
    std::vector<Live> kept;
    for (size_t k = 0; k < live.size(); ++k) {
      if (!trk_used[k]) {
        live[k].misses++;
        if (live[k].misses >= t_lost) {
          done.push_back(std::move(live[k].traj));
          continue;
        }
      }
      kept.push_back(std::move(live[k]));
    }
    live = std::move(kept);
  }
  for (auto& t : live) done.push_back(std::move(t.traj));
  std::sort(done.begin(), done.end(),
            [](const track::Trajectory& a, const track::Trajectory& b) {
              return a.track_id < b.track_id;
            });
  std::vector<track::TrackRecord> out;
  for (const auto& t : done) out.push_back(track::to_record(t, len_max));
  return out;
}

}  // namespace

std::vector<track::TrackRecord> infer_sequence(const synth::Dataset& ds,
                                               const det::DetectorNet& detector,
                                               const lsc::LscNet& classifier,
                                               const track::TrackerModel& tracker,
                                               const PipelineConfig& cfg,
                                               const StageObserver& observer) {
  auto emit = [&](const char* stage, int frame) {
    if (observer) observer(stage, frame);
  };
  const double gate = cfg.active_fusion_gate();
  const int c = cfg.lsc.c;

  track::TrackerState state(tracker, cfg.tracker);
  std::vector<std::vector<track::TrackedInstance>> greedy_frames;  // bytetrack-style path

  for (int t = 0; t < ds.frames; ++t) {
    img::Image frame;
    bool ok = true;
    try {
      frame = ds.frame(t);
    } catch (const std::exception& ex) {
      std::cerr << "warning: skipping corrupt frame " << t << ": " << ex.what() << "\n";
      ok = false;
    }

    std::vector<track::TrackedInstance> kept;
    if (ok) {
      std::vector<Detection> dets = detector.detect(frame, cfg.det_gate, cfg.detector.nms_iou);
      emit("detect", t);
      emit("det_gate", t);

      std::vector<img::Image> patches;
      patches.reserve(dets.size());
      for (const auto& d : dets)
        patches.push_back(geom::roi_rotate(frame, d.quad, cfg.lsc.patch_h, cfg.lsc.patch_w));
      emit("roi_rotate", t);

      std::vector<Prepared> prepared;
      for (size_t i = 0; i < dets.size(); ++i) {
        const lsc::RecognitionOutput rec = classifier.recognize(patches[i]);
        Prepared p;
        p.inst.det = dets[i];
        p.det_score = dets[i].score;
        p.inst.rec = rec.decoded;
        // stash visual features; embeddings are produced after gating
        p.inst.emb.assign(rec.f_vis.vec().begin(), rec.f_vis.vec().end());
        prepared.push_back(std::move(p));
      }
      emit("recognize", t);

      std::vector<int> langs;
      for (auto& p : prepared) langs.push_back(p.lang = lsc::language_score(p.inst.rec));
      emit("language_score", t);

      if (cfg.use_lsc_rescore) {
        std::vector<Detection> plain;
        for (const auto& p : prepared) plain.push_back(p.inst.det);
        const std::vector<Detection> rescored = lsc::rescore(plain, langs, cfg.fusion_weight);
        for (size_t i = 0; i < prepared.size(); ++i) prepared[i].inst.det = rescored[i];
      }
      emit("rescore", t);

      // instances enter the tracker only with fusion scores strictly above
      // the profile gate
      for (auto& p : prepared) {
        if (!(p.inst.det.score > gate)) continue;
        kept.push_back(std::move(p.inst));
      }
      emit("fusion_gate", t);

      std::vector<nn::Tensor> p_norms;
      for (const auto& inst : kept) {
        const geom::Centerline cl = geom::centerline(inst.det.quad, c);
        const std::vector<geom::Vec2> norm = geom::normalize_centerline(cl, ds.width, ds.height);
        nn::Tensor p_norm({c, 2});
        for (int i = 0; i < c; ++i) {
          p_norm[static_cast<int64_t>(i) * 2] = norm[static_cast<size_t>(i)].x;
          p_norm[static_cast<int64_t>(i) * 2 + 1] = norm[static_cast<size_t>(i)].y;
        }
        p_norms.push_back(std::move(p_norm));
      }
      emit("centerline", t);

      for (size_t i = 0; i < kept.size(); ++i) {
        nn::Tensor f_vis({c, cfg.lsc.d},
                         std::vector<double>(kept[i].emb.begin(), kept[i].emb.end()));
        kept[i].emb = tracker.embed(p_norms[i], f_vis);
      }
      emit("vpmm_fuse", t);
    }

    if (cfg.tracker_kind == "bytetrack-style") {
      greedy_frames.push_back(std::move(kept));
    } else {
      state.step(t, kept);
    }
    emit("tracker_step", t);
  }

  std::vector<track::TrackRecord> records;
  if (cfg.tracker_kind == "bytetrack-style") {
    records = greedy_iou_track(greedy_frames, c, cfg.tracker.t_lost);
  } else {
    state.finalize();
    for (const auto& traj : state.trajectories()) records.push_back(track::to_record(traj, c));
  }
  const track::Profile profile =
      cfg.profile == "dense" ? track::Profile::kDense : track::Profile::kDefault;
  records = track::filter_trajectories(std::move(records), profile, track::Task::kTrack,
                                       cfg.traj_score_thresh);
  emit("filter_trajectories", -1);
  return records;
}

std::vector<track::TrackRecord> run_inference(const std::string& video_dir,
                                              const Checkpoints& ckpts, const PipelineConfig& cfg,
                                              const std::string& out_path,
                                              const StageObserver& observer) {
  require(fs::exists(ckpts.detector), "run_inference: missing detector checkpoint " + ckpts.detector);
  require(fs::exists(ckpts.lsc), "run_inference: missing lsc checkpoint " + ckpts.lsc);
  require(fs::exists(ckpts.tracker), "run_inference: missing tracker checkpoint " + ckpts.tracker);
  const det::DetectorNet detector = det::DetectorNet::load(ckpts.detector);
  const lsc::LscNet classifier = lsc::LscNet::load(ckpts.lsc);
  const track::TrackerModel tracker = track::TrackerModel::load(ckpts.tracker);
  const synth::Dataset ds = synth::read_dataset(video_dir);
  auto records = infer_sequence(ds, detector, classifier, tracker, cfg, observer);
  if (!out_path.empty()) {
    track::write_tracks_jsonl(out_path, records);
    std::ofstream cf(out_path + ".config.json");
    cf << config_to_json_text(cfg) << "\n";
  }
  return records;
}

// ---------------- training ----------------

std::vector<track::TrainSequence> build_tracker_training_data(const det::DetectorNet& detector,
                                                              const lsc::LscNet& classifier,
                                                              const PipelineConfig& cfg,
                                                              const std::string& data_dir) {
  const int c = cfg.lsc.c;
  std::vector<track::TrainSequence> out;
  for (const auto& dir : synth::list_sequences(data_dir)) {
    const synth::Dataset ds = synth::read_dataset(dir);
    track::TrainSequence seq;
    for (int t = 0; t < ds.frames; ++t) {
      const img::Image frame = ds.frame(t);
      const FrameAnnotation& ann = ds.annotations[static_cast<size_t>(t)];
      track::SeqFrame sf;
      auto add_instance = [&](const geom::RotatedQuad& quad, int identity) {
        const img::Image patch = geom::roi_rotate(frame, quad, cfg.lsc.patch_h, cfg.lsc.patch_w);
        const lsc::RecognitionOutput rec = classifier.recognize(patch);
        const geom::Centerline cl = geom::centerline(quad, c);
        const auto norm = geom::normalize_centerline(cl, ds.width, ds.height);
        track::SeqInstance inst;
        inst.p_norm = nn::Tensor({c, 2});
        for (int i = 0; i < c; ++i) {
          inst.p_norm[static_cast<int64_t>(i) * 2] = norm[static_cast<size_t>(i)].x;
          inst.p_norm[static_cast<int64_t>(i) * 2 + 1] = norm[static_cast<size_t>(i)].y;
        }
        inst.f_vis = rec.f_vis;
        inst.identity = identity;
        sf.push_back(std::move(inst));
      };
      for (const auto& in : ann.instances) add_instance(in.quad, in.track_id);
      // background queries: confident detections far from every ground truth
      for (const auto& d : detector.detect(frame, cfg.det_gate, cfg.detector.nms_iou)) {
        double best = 0.0;
        for (const auto& in : ann.instances)
          best = std::max(best, geom::iou_rotated(d.quad, in.quad));
        if (best < 0.2) add_instance(d.quad, -1);
      }
      seq.push_back(std::move(sf));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void run_training(const std::string& stage, const PipelineConfig& cfg, const std::string& data,
                  const Checkpoints& prereq, const std::string& out_ckpt) {
  const std::string hash = config_hash(cfg);
  if (stage == "detector") {
    det::DetectorNet net = det::train_detector(cfg.detector, data);
    net.save(out_ckpt, hash);
  } else if (stage == "lsc") {
    require(!prereq.detector.empty() && fs::exists(prereq.detector),
            "run_training(lsc): missing prerequisite detector checkpoint");
    lsc::LscNet net = lsc::train_lsc(cfg.lsc, data);
    net.save(out_ckpt, hash);
  } else if (stage == "tracker") {
    require(!prereq.detector.empty() && fs::exists(prereq.detector),
            "run_training(tracker): missing prerequisite detector checkpoint");
    require(!prereq.lsc.empty() && fs::exists(prereq.lsc),
            "run_training(tracker): missing prerequisite lsc checkpoint");
    const det::DetectorNet detector = det::DetectorNet::load(prereq.detector);
    const lsc::LscNet classifier = lsc::LscNet::load(prereq.lsc);
    const auto seqs = build_tracker_training_data(detector, classifier, cfg, data);
    track::TrackerModel model = track::train_tracker(cfg.tracker, seqs);
    model.save(out_ckpt, hash);
  } else {
    throw std::runtime_error("run_training: unknown stage " + stage +
                             " (expected detector|lsc|tracker)");
  }
}

// ---------------- reference stack ----------------

PipelineConfig reference_config() {
  PipelineConfig cfg = config_from_json(json::object());
  cfg.detector.steps = 2500;
  cfg.detector.batch = 2;
  cfg.detector.lr = 3e-3;
  cfg.lsc.steps = 2500;
  cfg.lsc.batch = 8;
  cfg.lsc.lr = 2e-3;
  cfg.tracker.steps = 250;
  cfg.tracker.lr = 2e-3;
  return cfg;
}

namespace {

void write_preset(const std::string& name, uint64_t seed, const std::string& dir) {
  const auto scripts = synth::preset_scripts(name, seed);
  if (scripts.size() == 1) {
    synth::write_dataset(synth::generate_sequence(scripts[0]), scripts[0], dir);
    return;
  }
  for (size_t i = 0; i < scripts.size(); ++i) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "seq_%03zu", i);
    synth::write_dataset(synth::generate_sequence(scripts[i]), scripts[i],
                         (fs::path(dir) / sub).string());
  }
}

}  // namespace

ReferenceStack generate_reference_data(const std::string& root) {
  ReferenceStack st;
  st.root = root;
  fs::create_directories(root);
  st.train_det_dir = (fs::path(root) / "data" / "train_det").string();
  st.mine_dir = (fs::path(root) / "data" / "mine").string();
  st.eval_clean_dir = (fs::path(root) / "data" / "eval_clean").string();
  st.occlusion_dir = (fs::path(root) / "data" / "occlusion_gap").string();
  st.tracker_train_dir = (fs::path(root) / "data" / "tracker_train").string();
  write_preset("train-det", 1, st.train_det_dir);
  write_preset("mine", 2, st.mine_dir);
  write_preset("eval-clean", 3, st.eval_clean_dir);
  write_preset("occlusion-gap", 4, st.occlusion_dir);
  for (int s = 0; s < 3; ++s) {
    const std::string d =
        (fs::path(root) / "data" / ("bench_distractor_s" + std::to_string(s))).string();
    write_preset("bench-distractor", 101 + static_cast<uint64_t>(s), d);
    st.bench_distractor_dirs.push_back(d);
    const std::string cdir =
        (fs::path(root) / "data" / ("bench_crossing_s" + std::to_string(s))).string();
    write_preset("bench-crossing", 201 + static_cast<uint64_t>(s), cdir);
    st.bench_crossing_dirs.push_back(cdir);
  }
  // tracker training mixes the mining split with crossing-style sequences so
  // the matcher sees identical-word pairs during optimization
  fs::create_directories(st.tracker_train_dir);
  int idx = 0;
  for (const auto& dir : synth::list_sequences(st.mine_dir)) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "seq_%03d", idx++);
    fs::create_directories(fs::path(st.tracker_train_dir) / sub);
    fs::copy(dir, (fs::path(st.tracker_train_dir) / sub).string(),
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  }
  for (uint64_t s = 901; s <= 902; ++s) {
    const auto scripts = synth::preset_scripts("bench-crossing", s);
    char sub[32];
    std::snprintf(sub, sizeof(sub), "seq_%03d", idx++);
    synth::write_dataset(synth::generate_sequence(scripts[0]), scripts[0],
                         (fs::path(st.tracker_train_dir) / sub).string());
  }
  st.archive_dir = (fs::path(root) / "archive").string();
  st.ckpts.detector = (fs::path(root) / "ckpt" / "detector.ckpt").string();
  st.ckpts.lsc = (fs::path(root) / "ckpt" / "lsc.ckpt").string();
  st.ckpts.tracker = (fs::path(root) / "ckpt" / "tracker.ckpt").string();
  return st;
}

ReferenceStack build_reference_stack(const std::string& root) {
  ReferenceStack st = generate_reference_data(root);
  const PipelineConfig cfg = reference_config();
  fs::create_directories(fs::path(root) / "ckpt");

  run_training("detector", cfg, st.train_det_dir, {}, st.ckpts.detector);

  {
    const det::DetectorNet detector = det::DetectorNet::load(st.ckpts.detector);
    mine::CodeDictionary dict;
    dict.len_max = cfg.lsc.c;
    mine::build_lsc_dataset(
        synth::list_sequences(st.mine_dir),
        [&](const img::Image& f) { return detector.detect(f, cfg.mining.h_score, cfg.detector.nms_iou); },
        dict, cfg.mining, st.archive_dir);
  }
  run_training("lsc", cfg, st.archive_dir, {st.ckpts.detector, "", ""}, st.ckpts.lsc);
  run_training("tracker", cfg, st.tracker_train_dir, {st.ckpts.detector, st.ckpts.lsc, ""},
               st.ckpts.tracker);

  std::ofstream stamp(fs::path(root) / "stamp.json");
  json j;
  j["config_hash"] = config_hash(cfg);
  stamp << j.dump() << "\n";
  return st;
}

ReferenceStack ensure_reference_stack(const std::string& root) {
  const fs::path stamp = fs::path(root) / "stamp.json";
  if (fs::exists(stamp)) {
    std::ifstream is(stamp);
    try {
      json j = json::parse(is);
      if (j.value("config_hash", "") == config_hash(reference_config())) {
        ReferenceStack st = generate_reference_data(root);  // refresh data paths
        return st;
      }
    } catch (...) {
    }
  }
  return build_reference_stack(root);
}

}  // namespace logo::pipe
