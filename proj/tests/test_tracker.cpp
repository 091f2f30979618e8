#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "logo/rng.hpp"
#include "logo/tracker.hpp"
#include "oracles.hpp"

using namespace logo;
using namespace logo::track;

namespace {

TrackerConfig small_cfg() {
  TrackerConfig cfg;
  cfg.c = 4;
  cfg.d = 6;
  cfg.bank_cap = 3;
  cfg.t_lost = 3;
  cfg.seed = 5;
  return cfg;
}

std::vector<double> unit_vec(int dim, int axis, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(dim), 0.0);
  v[static_cast<size_t>(axis)] = scale;
  return v;
}

mine::CharSequence word_codes(const std::string& w, int len_max) {
  mine::CodeDictionary dict;
  dict.len_max = len_max;
  return mine::encode_positive(w, dict);
}

TrackedInstance make_inst(const geom::RotatedQuad& q, double score, std::vector<double> emb,
                          const std::string& word, int len_max = 26) {
  TrackedInstance inst;
  inst.det = {q, score};
  inst.emb = std::move(emb);
  inst.rec = word_codes(word, len_max);
  return inst;
}

}  // namespace

TEST_CASE("st_match: rows are distributions; empty pools put all mass on empty") {
  const auto P = st_match({{1, 0, 0, 0}, {0, 1, 0, 0}}, {}, 0.0);
  REQUIRE(P.p.size() == 2);
  for (const auto& row : P.p) {
    REQUIRE(row.size() == 1);
    CHECK(row[0] == doctest::Approx(1.0));
  }

  Rng rng(3);
  std::vector<std::vector<double>> dets, tracks;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> e(8), t(8);
    for (auto& v : e) v = rng.normal();
    for (auto& v : t) v = rng.normal();
    dets.push_back(e);
    tracks.push_back(t);
  }
  const auto Q = st_match(dets, tracks, -0.5);
  for (const auto& row : Q.p) {
    double sum = 0.0;
    for (double v : row) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("st_match: exact-match track wins as the empty bias goes to -inf") {
  const std::vector<double> e = unit_vec(8, 2, 10.0);
  const auto P = st_match({e}, {e}, -40.0);
  CHECK(P.p[0][0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("lt_match: self in bank wins; orthogonal banks lose to a strong bias") {
  const std::vector<double> q = unit_vec(8, 1, 5.0);
  const std::vector<double> other = unit_vec(8, 3, 5.0);
  const auto P = lt_match({q}, {{other, q}, {other}}, 0.0);
  REQUIRE(P.p[0].size() == 3);
  CHECK(P.p[0][0] > P.p[0][1]);  // bank containing the query itself wins

  const auto Pbg = lt_match({q}, {{other}}, 8.0);
  CHECK(Pbg.p[0][1] > 0.99);  // empty option dominates orthogonal banks
}

TEST_CASE("association loss: near-one oracle assignments give near-zero loss") {
  // probability-1 assignments are the loss zero point; realized here through
  // the matcher math with large-margin embeddings
  TrackerConfig cfg = small_cfg();
  const std::vector<double> e0 = unit_vec(cfg.emb_dim(), 0, 50.0);
  const std::vector<double> e1 = unit_vec(cfg.emb_dim(), 1, 50.0);
  const auto P = st_match({e0, e1}, {e0, e1}, 0.0);
  const double nll = -std::log(P.p[0][0]) - std::log(P.p[1][1]);
  CHECK(nll < 1e-9);
  const auto L = lt_match({e0}, {{e1, e0}}, 0.0);
  CHECK(-std::log(L.p[0][0]) < 1e-9);
}

TEST_CASE("association loss gradient matches finite differences") {
  TrackerConfig cfg = small_cfg();
  TrackerModel model(cfg);
  Rng rng(11);

  // two identities plus one background instance over 3 frames
  TrainSequence seq;
  for (int t = 0; t < 3; ++t) {
    SeqFrame frame;
    for (int id = 0; id < 2; ++id) {
      SeqInstance inst;
      inst.p_norm = nn::Tensor({cfg.c, 2});
      for (int64_t i = 0; i < inst.p_norm.size(); ++i)
        inst.p_norm[i] = 0.1 + 0.4 * id + 0.02 * t + 0.01 * rng.uniform();
      inst.f_vis = nn::Tensor({cfg.c, cfg.d});
      for (int64_t i = 0; i < inst.f_vis.size(); ++i) inst.f_vis[i] = rng.normal() + id;
      inst.identity = id;
      frame.push_back(std::move(inst));
    }
    if (t >= 1) {
      SeqInstance bg;
      bg.p_norm = nn::Tensor({cfg.c, 2});
      bg.f_vis = nn::Tensor({cfg.c, cfg.d});
      for (int64_t i = 0; i < bg.f_vis.size(); ++i) bg.f_vis[i] = rng.normal() - 1.0;
      bg.identity = -1;
      frame.push_back(std::move(bg));
    }
    seq.push_back(std::move(frame));
  }

  auto loss_fn = [&]() { return model.loss_asso(seq); };

  nn::Tape tape;
  nn::GraphParams P(tape, model.params(), true);
  nn::Val loss = model.build_asso_loss(tape, P, seq);
  CHECK(tape.val(loss).item() == doctest::Approx(loss_fn()));
  tape.backward(loss);

  Rng pick(23);
  for (const char* name : {"vpmm.pos0.w", "vpmm.fuse0.w", "vpmm.fuse1.w", "st_bias", "lt_bias"}) {
    nn::Tensor& w = model.params().get(name);
    const nn::Tensor grad = tape.grad(P(name));
    for (int k = 0; k < 3; ++k) {
      const int64_t i = pick.uniform_int(static_cast<int>(w.size()));
      const double fd = oracles::central_diff(loss_fn, &w[i], 1e-6);
      CHECK(oracles::rel_err(grad[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("association NLL decreases over training (three seeds)") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    TrackerConfig cfg = small_cfg();
    cfg.seed = seed;
    cfg.lr = 5e-3;
    TrackerModel model(cfg);
    Rng rng(100 + seed);
    TrainSequence seq;
    for (int t = 0; t < 4; ++t) {
      SeqFrame frame;
      for (int id = 0; id < 3; ++id) {
        SeqInstance inst;
        inst.p_norm = nn::Tensor({cfg.c, 2});
        for (int64_t i = 0; i < inst.p_norm.size(); ++i)
          inst.p_norm[i] = 0.15 + 0.3 * id + 0.02 * t;
        inst.f_vis = nn::Tensor({cfg.c, cfg.d});
        for (int64_t i = 0; i < inst.f_vis.size(); ++i)
          inst.f_vis[i] = 0.3 * id + 0.1 * rng.normal();
        inst.identity = id;
        frame.push_back(std::move(inst));
      }
      seq.push_back(std::move(frame));
    }
    const double before = model.loss_asso(seq);
    for (int step = 0; step < 40; ++step) model.train_step(seq);
    CHECK(model.loss_asso(seq) < before);
  }
}

TEST_CASE("step: single target yields one trajectory, zero switches") {
  TrackerConfig cfg = small_cfg();
  TrackerModel model(cfg);
  TrackerState state(model, cfg);
  const int dim = cfg.emb_dim();
  for (int t = 0; t < 6; ++t) {
    const auto q = oracles::box(10.0 + t, 10, 20, 8);
    state.step(t, {make_inst(q, 0.9, unit_vec(dim, 0, 3.0), "word")});
  }
  state.finalize();
  const auto trajs = state.trajectories();
  REQUIRE(trajs.size() == 1);
  CHECK(trajs[0].entries.size() == 6);
  CHECK(mine::decode_word(trajs[0].voted_codes(26)) == "word");
  CHECK(trajs[0].mean_score() == doctest::Approx(0.9));
}

TEST_CASE("step: empty frames only age the counters; tracks expire after t_lost") {
  TrackerConfig cfg = small_cfg();  // t_lost = 3
  TrackerModel model(cfg);
  TrackerState state(model, cfg);
  const int dim = cfg.emb_dim();
  state.step(0, {make_inst(oracles::box(10, 10, 20, 8), 0.8, unit_vec(dim, 0, 3.0), "aa")});
  for (int t = 1; t <= 3; ++t) state.step(t, {});
  // the track expired; a new identical detection starts a new id
  state.step(4, {make_inst(oracles::box(10, 10, 20, 8), 0.8, unit_vec(dim, 0, 3.0), "aa")});
  state.finalize();
  const auto trajs = state.trajectories();
  REQUIRE(trajs.size() == 2);
  CHECK(trajs[0].track_id == 0);
  CHECK(trajs[1].track_id == 1);
}

TEST_CASE("step: long-term matcher re-links across a gap that short-term cannot") {
  TrackerConfig cfg = small_cfg();
  cfg.t_lost = 10;
  TrackerModel model(cfg);
  const int dim = cfg.emb_dim();
  const auto emb = unit_vec(dim, 1, 4.0);

  auto run = [&](bool use_lt) {
    TrackerConfig c2 = cfg;
    c2.use_lt = use_lt;
    TrackerState state(model, c2);
    for (int t = 0; t < 3; ++t)
      state.step(t, {make_inst(oracles::box(10.0 + t, 10, 20, 8), 0.9, emb, "gap")});
    for (int t = 3; t < 8; ++t) state.step(t, {});  // occlusion gap
    for (int t = 8; t < 11; ++t)
      state.step(t, {make_inst(oracles::box(10.0 + t, 10, 20, 8), 0.9, emb, "gap")});
    state.finalize();
    return state.trajectories();
  };

  const auto with_lt = run(true);
  REQUIRE(with_lt.size() == 1);  // identity survives the gap
  CHECK(with_lt[0].entries.size() == 6);

  const auto without_lt = run(false);
  CHECK(without_lt.size() == 2);  // short-term alone fragments the identity
}

TEST_CASE("step is deterministic and never double-assigns") {
  TrackerConfig cfg = small_cfg();
  TrackerModel model(cfg);
  Rng rng(77);
  auto build_frame = [&](int n) {
    std::vector<TrackedInstance> out;
    for (int i = 0; i < n; ++i) {
      std::vector<double> e(static_cast<size_t>(cfg.emb_dim()));
      for (auto& v : e) v = rng.normal();
      out.push_back(make_inst(oracles::box(10.0 + 30 * i, 10, 20, 8), 0.7, e, "w"));
    }
    return out;
  };
  std::vector<std::vector<TrackedInstance>> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(build_frame(2 + (t % 2)));

  auto run = [&]() {
    TrackerState s(model, cfg);
    for (int t = 0; t < 5; ++t) s.step(t, frames[static_cast<size_t>(t)]);
    s.finalize();
    return s.trajectories();
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].track_id == b[i].track_id);
    CHECK(a[i].entries.size() == b[i].entries.size());
  }
  // per frame: no duplicate frame ids inside one trajectory, and across
  // trajectories each detection quad appears exactly once
  for (const auto& traj : a)
    for (size_t k = 1; k < traj.entries.size(); ++k)
      CHECK(traj.entries[k].frame_id > traj.entries[k - 1].frame_id);
}

TEST_CASE("trajectory filtering thresholds and pass-through") {
  auto rec = [](int id, double score, const std::string& word, int frames) {
    TrackRecord r;
    r.track_id = id;
    r.word = word;
    for (int t = 0; t < frames; ++t) r.frames.push_back({t, oracles::box(0, 0, 4, 4), score});
    return r;
  };
  std::vector<TrackRecord> tracks{rec(0, 0.59, "good", 4), rec(1, 0.60, "fine", 4),
                                  rec(2, 0.95, "a", 4), rec(3, 0.95, "", 4)};

  const auto def = filter_trajectories(tracks, Profile::kDefault, Task::kTrack);
  CHECK(def.size() == 4);  // pass-through

  const auto dense_track = filter_trajectories(tracks, Profile::kDense, Task::kTrack);
  REQUIRE(dense_track.size() == 3);  // 0.59 dropped, 0.60 kept
  CHECK(dense_track[0].track_id == 1);

  const auto dense_spot = filter_trajectories(tracks, Profile::kDense, Task::kSpot);
  REQUIRE(dense_spot.size() == 1);  // single char and background dropped too
  CHECK(dense_spot[0].track_id == 1);
}

TEST_CASE("tracks.jsonl round trip") {
  namespace fs = std::filesystem;
  std::vector<TrackRecord> tracks;
  TrackRecord r;
  r.track_id = 3;
  r.word = "word";
  r.frames.push_back({0, oracles::box(1.5, 2.25, 20, 8), 0.875});
  r.frames.push_back({1, oracles::box(2.5, 2.25, 20, 8), 0.75});
  tracks.push_back(r);
  const std::string path = (fs::temp_directory_path() / "tracks_roundtrip.jsonl").string();
  write_tracks_jsonl(path, tracks);
  const auto back = read_tracks_jsonl(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].track_id == 3);
  CHECK(back[0].word == "word");
  REQUIRE(back[0].frames.size() == 2);
  CHECK(back[0].frames[1].quad.v[0].x == 2.5);
  CHECK(back[0].frames[0].score == 0.875);
  fs::remove(path);
}

TEST_CASE("tracker checkpoints restore biases and fusion weights") {
  namespace fs = std::filesystem;
  TrackerConfig cfg = small_cfg();
  TrackerModel model(cfg);
  model.params().get("st_bias")[0] = 0.375;
  const std::string path = (fs::temp_directory_path() / "trk_ckpt_test.bin").string();
  model.save(path, "h");
  const TrackerModel loaded = TrackerModel::load(path);
  CHECK(loaded.st_bias() == 0.375);
  CHECK(loaded.config().c == cfg.c);
  fs::remove(path);
}
