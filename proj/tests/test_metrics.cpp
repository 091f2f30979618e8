#include <doctest.h>

#include "logo/assignment.hpp"
#include "logo/metrics.hpp"
#include "logo/rng.hpp"
#include "oracles.hpp"

using namespace logo;
using namespace logo::metrics;
using track::TrackRecord;

namespace {

// compact scenario builder: fixed-size boxes on a grid
struct Scenario {
  std::vector<FrameAnnotation> gt;
  std::vector<TrackRecord> tracks;

  void gt_box(int frame, int id, double x, double y, const std::string& word = "w") {
    while (static_cast<int>(gt.size()) <= frame) {
      FrameAnnotation ann;
      ann.frame_id = static_cast<int>(gt.size());
      gt.push_back(ann);
    }
    gt[static_cast<size_t>(frame)].instances.push_back({oracles::box(x, y, 20, 10), word, id, true});
  }
  void pred_box(int frame, int id, double x, double y, const std::string& word = "w",
                double score = 0.9) {
    for (auto& t : tracks)
      if (t.track_id == id) {
        t.frames.push_back({frame, oracles::box(x, y, 20, 10), score});
        return;
      }
    TrackRecord r;
    r.track_id = id;
    r.word = word;
    r.frames.push_back({frame, oracles::box(x, y, 20, 10), score});
    tracks.push_back(r);
  }
};

void check_equal(const MetricsReport& got, const oracles::MotOracleResult& want) {
  CHECK(got.mota == doctest::Approx(want.mota).epsilon(1e-12));
  CHECK(got.idf1 == doctest::Approx(want.idf1).epsilon(1e-12));
  CHECK(got.m_tracked == doctest::Approx(want.m_tracked).epsilon(1e-12));
  CHECK(got.m_lost == doctest::Approx(want.m_lost).epsilon(1e-12));
  CHECK(got.fn == want.fn);
  CHECK(got.fp == want.fp);
  CHECK(got.id_switches == want.idsw);
  CHECK(got.motp.has_value() == want.motp.has_value());
  if (got.motp && want.motp) CHECK(*got.motp == doctest::Approx(*want.motp).epsilon(1e-12));
}

}  // namespace

TEST_CASE("hungarian solver agrees with brute force on random matrices") {
  Rng rng(91);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + rng.uniform_int(5);
    std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(n)));
    for (auto& row : cost)
      for (auto& v : row) v = rng.uniform(0, 10);
    const auto assign = min_cost_assignment(cost);
    double total = 0.0;
    std::vector<char> used(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      REQUIRE(assign[static_cast<size_t>(i)] >= 0);
      CHECK(!used[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
      used[static_cast<size_t>(assign[static_cast<size_t>(i)])] = 1;
      total += cost[static_cast<size_t>(i)][static_cast<size_t>(assign[static_cast<size_t>(i)])];
    }
    CHECK(total == doctest::Approx(oracles::brute_force_assignment_cost(cost)).epsilon(1e-9));
  }
}

TEST_CASE("eval_detection: identity, empty conventions") {
  Scenario s;
  s.gt_box(0, 0, 10, 10);
  s.gt_box(0, 1, 60, 10);
  std::vector<std::vector<Detection>> preds(1);
  preds[0].push_back({oracles::box(10, 10, 20, 10), 0.9});
  preds[0].push_back({oracles::box(60, 10, 20, 10), 0.9});
  const auto r = eval_detection(preds, s.gt, 0.5);
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(1.0));
  CHECK(r.f_measure == doctest::Approx(1.0));

  // zero preds and zero gts: vacuous success
  const auto vac = eval_detection({{}}, {FrameAnnotation{0, {}}}, 0.5);
  CHECK(vac.precision == doctest::Approx(1.0));
  CHECK(vac.recall == doctest::Approx(1.0));
  CHECK(vac.f_measure == doctest::Approx(1.0));

  // zero preds against ground truth: P=1 by convention, R=F=0
  const auto miss = eval_detection({{}}, s.gt, 0.5);
  CHECK(miss.precision == doctest::Approx(1.0));
  CHECK(miss.recall == doctest::Approx(0.0));
  CHECK(miss.f_measure == doctest::Approx(0.0));
}

TEST_CASE("eval_detection equals exhaustive matching on random scenes") {
  Rng rng(93);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<FrameAnnotation> gt(1);
    gt[0].frame_id = 0;
    std::vector<std::vector<Detection>> preds(1);
    const int ng = rng.uniform_int(5), np = rng.uniform_int(5);
    for (int i = 0; i < ng; ++i)
      gt[0].instances.push_back(
          {oracles::box(rng.uniform(0, 100), rng.uniform(0, 60), 20, 10), "w", i, true});
    for (int j = 0; j < np; ++j)
      preds[0].push_back({oracles::box(rng.uniform(0, 100), rng.uniform(0, 60), 20, 10), 0.9});
    const auto got = eval_detection(preds, gt, 0.5);

    // exhaustive max-cardinality matching over eligible pairs
    std::vector<std::vector<char>> ok(static_cast<size_t>(ng),
                                      std::vector<char>(static_cast<size_t>(np), 0));
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < np; ++j)
        ok[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            geom::iou_rotated(gt[0].instances[static_cast<size_t>(i)].quad,
                              preds[0][static_cast<size_t>(j)].quad) >= 0.5;
    int best = 0;
    std::function<void(int, std::vector<char>&, int)> rec = [&](int gi, std::vector<char>& used,
                                                                int count) {
      if (gi == ng) {
        best = std::max(best, count);
        return;
      }
      rec(gi + 1, used, count);
      for (int j = 0; j < np; ++j)
        if (!used[static_cast<size_t>(j)] && ok[static_cast<size_t>(gi)][static_cast<size_t>(j)]) {
          used[static_cast<size_t>(j)] = 1;
          rec(gi + 1, used, count + 1);
          used[static_cast<size_t>(j)] = 0;
        }
    };
    std::vector<char> used(static_cast<size_t>(np), 0);
    rec(0, used, 0);
    CHECK(got.tp == best);
  }
}

TEST_CASE("eval_mot: perfect tracking is the identity case") {
  Scenario s;
  for (int t = 0; t < 5; ++t) {
    s.gt_box(t, 0, 10.0 + t, 10);
    s.gt_box(t, 1, 80.0, 40);
    s.pred_box(t, 7, 10.0 + t, 10);
    s.pred_box(t, 9, 80.0, 40);
  }
  const auto r = eval_mot(s.tracks, s.gt, 0.5);
  CHECK(r.mota == doctest::Approx(1.0));
  CHECK(r.idf1 == doctest::Approx(1.0));
  CHECK(*r.motp == doctest::Approx(1.0));
  CHECK(r.m_tracked == doctest::Approx(100.0));
  CHECK(r.m_lost == doctest::Approx(0.0));
  CHECK(r.id_switches == 0);
}

TEST_CASE("eval_mot: the 8/10-frame mostly-tracked boundary is inclusive") {
  Scenario s;
  for (int t = 0; t < 10; ++t) s.gt_box(t, 0, 10, 10);
  for (int t = 0; t < 8; ++t) s.pred_box(t, 0, 10, 10);  // exactly 80 percent
  const auto r = eval_mot(s.tracks, s.gt, 0.5);
  CHECK(r.m_tracked == doctest::Approx(100.0));
  CHECK(r.m_lost == doctest::Approx(0.0));
  check_equal(r, oracles::mot_oracle(s.tracks, s.gt, 0.5, false));

  // 2/10 = 20 percent is NOT mostly lost (strictly-below rule)
  Scenario s2;
  for (int t = 0; t < 10; ++t) s2.gt_box(t, 0, 10, 10);
  for (int t = 0; t < 2; ++t) s2.pred_box(t, 0, 10, 10);
  const auto r2 = eval_mot(s2.tracks, s2.gt, 0.5);
  CHECK(r2.m_lost == doctest::Approx(0.0));
  CHECK(r2.m_tracked == doctest::Approx(0.0));

  Scenario s3;
  for (int t = 0; t < 10; ++t) s3.gt_box(t, 0, 10, 10);
  s3.pred_box(0, 0, 10, 10);  // 1/10 -> mostly lost
  CHECK(eval_mot(s3.tracks, s3.gt, 0.5).m_lost == doctest::Approx(100.0));
}

TEST_CASE("eval_mot: duplicate (track_id, frame_id) is a validation error") {
  Scenario s;
  s.gt_box(0, 0, 10, 10);
  s.pred_box(0, 0, 10, 10);
  s.tracks[0].frames.push_back({0, oracles::box(50, 10, 20, 10), 0.9});
  CHECK_THROWS(eval_mot(s.tracks, s.gt, 0.5));
}

TEST_CASE("eval_mot: MOTP is omitted when nothing matches, never zero") {
  Scenario s;
  s.gt_box(0, 0, 10, 10);
  const auto r = eval_mot(s.tracks, s.gt, 0.5);
  CHECK_FALSE(r.motp.has_value());
  CHECK(r.mota < 1.0);
}

TEST_CASE("eval_mot equals the exhaustive oracle on varied hand-built scenarios") {
  std::vector<Scenario> scenarios;

  {  // misses in the middle
    Scenario s;
    for (int t = 0; t < 6; ++t) s.gt_box(t, 0, 10, 10);
    for (int t : {0, 1, 4, 5}) s.pred_box(t, 0, 10, 10);
    scenarios.push_back(s);
  }
  {  // identity switch mid-sequence
    Scenario s;
    for (int t = 0; t < 6; ++t) s.gt_box(t, 0, 10.0 + 2 * t, 10);
    for (int t = 0; t < 3; ++t) s.pred_box(t, 0, 10.0 + 2 * t, 10);
    for (int t = 3; t < 6; ++t) s.pred_box(t, 1, 10.0 + 2 * t, 10);
    scenarios.push_back(s);
  }
  {  // false positive track
    Scenario s;
    for (int t = 0; t < 5; ++t) {
      s.gt_box(t, 0, 10, 10);
      s.pred_box(t, 0, 10, 10);
      s.pred_box(t, 1, 90, 50);
    }
    scenarios.push_back(s);
  }
  {  // crossing identity swap
    Scenario s;
    for (int t = 0; t < 7; ++t) {
      s.gt_box(t, 0, 10.0 + 10 * t, 10);
      s.gt_box(t, 1, 70.0 - 10 * t, 10);
      const int pa = t < 4 ? 0 : 1;
      const int pb = t < 4 ? 1 : 0;
      s.pred_box(t, pa, 10.0 + 10 * t, 10);
      s.pred_box(t, pb, 70.0 - 10 * t, 10);
    }
    scenarios.push_back(s);
  }
  {  // fragmented into three short tracks
    Scenario s;
    for (int t = 0; t < 9; ++t) s.gt_box(t, 0, 10, 10.0 + t);
    for (int t = 0; t < 3; ++t) s.pred_box(t, 0, 10, 10.0 + t);
    for (int t = 3; t < 6; ++t) s.pred_box(t, 1, 10, 10.0 + t);
    for (int t = 6; t < 9; ++t) s.pred_box(t, 2, 10, 10.0 + t);
    scenarios.push_back(s);
  }
  {  // empty predictions entirely
    Scenario s;
    for (int t = 0; t < 4; ++t) s.gt_box(t, 0, 10, 10);
    scenarios.push_back(s);
  }
  {  // three targets, one lost early
    Scenario s;
    for (int t = 0; t < 8; ++t) {
      s.gt_box(t, 0, 10, 10);
      s.gt_box(t, 1, 50, 30);
      s.gt_box(t, 2, 100, 50);
      s.pred_box(t, 0, 10, 10);
      if (t < 1) s.pred_box(t, 2, 100, 50);
      s.pred_box(t, 1, 50, 30);
    }
    scenarios.push_back(s);
  }

  for (const auto& s : scenarios) {
    const auto got = eval_mot(s.tracks, s.gt, 0.5);
    const auto want = oracles::mot_oracle(s.tracks, s.gt, 0.5, false);
    check_equal(got, want);
  }
}

TEST_CASE("eval_mot matches the oracle on randomized scenes") {
  Rng rng(95);
  for (int trial = 0; trial < 15; ++trial) {
    Scenario s;
    const int frames = 3 + rng.uniform_int(6);
    const int gts = 1 + rng.uniform_int(3);
    const int preds = 1 + rng.uniform_int(3);
    for (int id = 0; id < gts; ++id) {
      const double x = rng.uniform(0, 90), y = rng.uniform(0, 50);
      for (int t = 0; t < frames; ++t)
        if (rng.uniform() < 0.8) s.gt_box(t, id, x + t * rng.uniform(0, 2), y);
    }
    for (int id = 0; id < preds; ++id) {
      const double x = rng.uniform(0, 90), y = rng.uniform(0, 50);
      for (int t = 0; t < frames; ++t)
        if (rng.uniform() < 0.8) s.pred_box(t, id, x + t * rng.uniform(0, 2), y);
    }
    const auto got = eval_mot(s.tracks, s.gt, 0.5);
    const auto want = oracles::mot_oracle(s.tracks, s.gt, 0.5, false);
    check_equal(got, want);
  }
}

TEST_CASE("metrics are invariant to trajectory order and id relabeling") {
  Scenario s;
  for (int t = 0; t < 6; ++t) {
    s.gt_box(t, 3, 10.0 + t, 10);
    s.gt_box(t, 9, 80.0, 40);
    s.pred_box(t, 4, 10.0 + t, 10);
    if (t != 2) s.pred_box(t, 8, 80.0, 40);
  }
  const auto base = eval_mot(s.tracks, s.gt, 0.5);

  // reverse track order and relabel the ids
  std::vector<TrackRecord> shuffled = s.tracks;
  std::reverse(shuffled.begin(), shuffled.end());
  for (auto& t : shuffled) t.track_id += 100;
  const auto moved = eval_mot(shuffled, s.gt, 0.5);
  CHECK(base.mota == doctest::Approx(moved.mota));
  CHECK(base.idf1 == doctest::Approx(moved.idf1));
  CHECK(base.m_tracked == doctest::Approx(moved.m_tracked));
  CHECK(base.fn == moved.fn);
  CHECK(base.fp == moved.fp);
}

TEST_CASE("eval_spotting: word mismatches void otherwise perfect matches") {
  Scenario s;
  for (int t = 0; t < 5; ++t) {
    s.gt_box(t, 0, 10, 10, "right");
    s.pred_box(t, 0, 10, 10, "wrong");
  }
  const auto r = eval_spotting(s.tracks, s.gt, 0.5);
  CHECK(r.mota <= 0.0);  // every match voided: FN + FP dominate
  const auto tracking = eval_mot(s.tracks, s.gt, 0.5);
  CHECK(tracking.mota == doctest::Approx(1.0));

  // correct words: spotting equals tracking, case-insensitively
  Scenario ok;
  for (int t = 0; t < 5; ++t) {
    ok.gt_box(t, 0, 10, 10, "Same");
    ok.pred_box(t, 0, 10, 10, "sAME");
  }
  const auto spot = eval_spotting(ok.tracks, ok.gt, 0.5);
  const auto trk = eval_mot(ok.tracks, ok.gt, 0.5);
  CHECK(spot.mota == doctest::Approx(trk.mota));
  CHECK(spot.idf1 == doctest::Approx(trk.idf1));

  // one wrong word out of two geometrically identical scenarios
  Scenario two;
  for (int t = 0; t < 5; ++t) {
    two.gt_box(t, 0, 10, 10, "aa");
    two.gt_box(t, 1, 60, 30, "bb");
    two.pred_box(t, 0, 10, 10, "aa");
    two.pred_box(t, 1, 60, 30, "xx");
  }
  const auto spot2 = eval_spotting(two.tracks, two.gt, 0.5);
  const auto trk2 = eval_mot(two.tracks, two.gt, 0.5);
  CHECK(spot2.mota < trk2.mota);
  check_equal(spot2, oracles::mot_oracle(two.tracks, two.gt, 0.5, true));
}
