#include "logo/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "logo/assignment.hpp"
#include "logo/common.hpp"

namespace logo::metrics {

namespace {

constexpr double kBig = 1e6;
constexpr double kUnmatched = 10.0;

std::string fold(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Maximize (match count, then total IoU) over eligible pairs.
std::vector<std::pair<int, int>> match_stage(const std::vector<std::vector<double>>& iou,
                                             const std::vector<std::vector<char>>& eligible) {
  const int ng = static_cast<int>(iou.size());
  const int np = ng == 0 ? 0 : static_cast<int>(iou[0].size());
  std::vector<std::pair<int, int>> out;
  if (ng == 0 || np == 0) return out;
  const int n = ng + np;
  std::vector<std::vector<double>> sq(static_cast<size_t>(n),
                                      std::vector<double>(static_cast<size_t>(n), kBig));
  for (int i = 0; i < ng; ++i) {
    for (int j = 0; j < np; ++j)
      if (eligible[static_cast<size_t>(i)][static_cast<size_t>(j)])
        sq[static_cast<size_t>(i)][static_cast<size_t>(j)] = 1.0 - iou[static_cast<size_t>(i)][static_cast<size_t>(j)];
    sq[static_cast<size_t>(i)][static_cast<size_t>(np + i)] = kUnmatched;
  }
  for (int j = 0; j < np; ++j) {
    sq[static_cast<size_t>(ng + j)][static_cast<size_t>(j)] = kUnmatched;
    for (int k = 0; k < ng; ++k) sq[static_cast<size_t>(ng + j)][static_cast<size_t>(np + k)] = 0.0;
  }
  const std::vector<int> assign = min_cost_assignment(sq);
  for (int i = 0; i < ng; ++i) {
    const int j = assign[static_cast<size_t>(i)];
    if (j >= 0 && j < np && eligible[static_cast<size_t>(i)][static_cast<size_t>(j)])
      out.emplace_back(i, j);
  }
  return out;
}

}  // namespace

DetectionPRF eval_detection(const std::vector<std::vector<Detection>>& preds_per_frame,
                            const std::vector<FrameAnnotation>& gts, double iou_thresh) {
  require(preds_per_frame.size() == gts.size(), "eval_detection: frame count mismatch");
  DetectionPRF r;
  r.tp = r.fp = r.fn = 0;
  for (size_t f = 0; f < gts.size(); ++f) {
    const auto& preds = preds_per_frame[f];
    const auto& inst = gts[f].instances;
    const int ng = static_cast<int>(inst.size());
    const int np = static_cast<int>(preds.size());
    std::vector<std::vector<double>> iou(static_cast<size_t>(ng),
                                         std::vector<double>(static_cast<size_t>(np), 0.0));
    std::vector<std::vector<char>> ok(static_cast<size_t>(ng),
                                      std::vector<char>(static_cast<size_t>(np), 0));
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < np; ++j) {
        const double v = geom::iou_rotated(inst[static_cast<size_t>(i)].quad, preds[static_cast<size_t>(j)].quad);
        iou[static_cast<size_t>(i)][static_cast<size_t>(j)] = v;
        ok[static_cast<size_t>(i)][static_cast<size_t>(j)] = v >= iou_thresh ? 1 : 0;
      }
    const auto matches = match_stage(iou, ok);
    r.tp += static_cast<long>(matches.size());
    r.fn += ng - static_cast<long>(matches.size());
    r.fp += np - static_cast<long>(matches.size());
  }
  r.precision = (r.tp + r.fp) == 0 ? 1.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? 1.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  r.f_measure = (r.precision + r.recall) == 0.0
                    ? 0.0
                    : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

namespace {

struct FrameItem {
  int id;  // trajectory identity
  const geom::RotatedQuad* quad;
  const std::string* word;
};

MetricsReport eval_tracks(const std::vector<track::TrackRecord>& tracks,
                          const std::vector<FrameAnnotation>& gts, double iou_thresh,
                          bool require_word) {
  // index predictions per frame; reject duplicate (track_id, frame_id)
  std::map<int, std::vector<FrameItem>> preds;
  std::set<std::pair<int, int>> seen;
  std::map<int, std::string> pred_words;
  std::map<int, long> pred_len;
  for (const auto& t : tracks) {
    pred_words[t.track_id] = fold(t.word);
    for (const auto& f : t.frames) {
      require(seen.insert({t.track_id, f.frame_id}).second,
              "eval: duplicate (track_id, frame_id) in input");
      preds[f.frame_id].push_back({t.track_id, &f.quad, &pred_words[t.track_id]});
      pred_len[t.track_id]++;
    }
  }

  std::map<int, std::vector<FrameItem>> gt;
  std::map<int, std::string> gt_words;
  std::map<int, long> gt_len;
  long gt_boxes = 0;
  for (const auto& ann : gts)
    for (const auto& in : ann.instances) {
      gt_words[in.track_id] = fold(in.text);
      gt[ann.frame_id].push_back({in.track_id, &in.quad, &gt_words[in.track_id]});
      gt_len[in.track_id]++;
      ++gt_boxes;
    }

  std::set<int> frames;
  for (const auto& [f, _] : preds) frames.insert(f);
  for (const auto& [f, _] : gt) frames.insert(f);

  MetricsReport r;
  r.gt_boxes = gt_boxes;
  r.gt_trajectories = static_cast<int>(gt_len.size());

  std::map<int, int> mapping;  // persistent gt identity -> pred identity
  std::map<int, long> matched_frames;
  std::map<std::pair<int, int>, long> overlap;  // (gt id, pred id) -> eligible co-frames
  long matches_total = 0;
  double iou_sum = 0.0;
  long pred_boxes = 0;

  for (int f : frames) {
    const auto git = gt.find(f);
    const auto pit = preds.find(f);
    const std::vector<FrameItem> empty;
    const std::vector<FrameItem>& G = git == gt.end() ? empty : git->second;
    const std::vector<FrameItem>& P = pit == preds.end() ? empty : pit->second;
    pred_boxes += static_cast<long>(P.size());

    const int ng = static_cast<int>(G.size());
    const int np = static_cast<int>(P.size());
    std::vector<std::vector<double>> iou(static_cast<size_t>(ng),
                                         std::vector<double>(static_cast<size_t>(np), 0.0));
    std::vector<std::vector<char>> ok(static_cast<size_t>(ng),
                                      std::vector<char>(static_cast<size_t>(np), 0));
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < np; ++j) {
        const double v = geom::iou_rotated(*G[static_cast<size_t>(i)].quad, *P[static_cast<size_t>(j)].quad);
        iou[static_cast<size_t>(i)][static_cast<size_t>(j)] = v;
        bool eligible = v >= iou_thresh;
        if (eligible && require_word)
          eligible = *G[static_cast<size_t>(i)].word == *P[static_cast<size_t>(j)].word;
        ok[static_cast<size_t>(i)][static_cast<size_t>(j)] = eligible ? 1 : 0;
        if (eligible) overlap[{G[static_cast<size_t>(i)].id, P[static_cast<size_t>(j)].id}]++;
      }

    std::vector<char> g_used(static_cast<size_t>(ng), 0), p_used(static_cast<size_t>(np), 0);
    std::vector<std::pair<int, int>> frame_matches;

    // carry-over: keep still-valid previous correspondences first
    for (int i = 0; i < ng; ++i) {
      const auto m = mapping.find(G[static_cast<size_t>(i)].id);
      if (m == mapping.end()) continue;
      for (int j = 0; j < np; ++j)
        if (!p_used[static_cast<size_t>(j)] && P[static_cast<size_t>(j)].id == m->second &&
            ok[static_cast<size_t>(i)][static_cast<size_t>(j)]) {
          frame_matches.emplace_back(i, j);
          g_used[static_cast<size_t>(i)] = 1;
          p_used[static_cast<size_t>(j)] = 1;
          break;
        }
    }

    // optimal matching on the remainder
    std::vector<int> g_rest, p_rest;
    for (int i = 0; i < ng; ++i)
      if (!g_used[static_cast<size_t>(i)]) g_rest.push_back(i);
    for (int j = 0; j < np; ++j)
      if (!p_used[static_cast<size_t>(j)]) p_rest.push_back(j);
    std::vector<std::vector<double>> sub_iou(g_rest.size(), std::vector<double>(p_rest.size(), 0.0));
    std::vector<std::vector<char>> sub_ok(g_rest.size(), std::vector<char>(p_rest.size(), 0));
    for (size_t a = 0; a < g_rest.size(); ++a)
      for (size_t b = 0; b < p_rest.size(); ++b) {
        sub_iou[a][b] = iou[static_cast<size_t>(g_rest[a])][static_cast<size_t>(p_rest[b])];
        sub_ok[a][b] = ok[static_cast<size_t>(g_rest[a])][static_cast<size_t>(p_rest[b])];
      }
    for (const auto& [a, b] : match_stage(sub_iou, sub_ok))
      frame_matches.emplace_back(g_rest[static_cast<size_t>(a)], p_rest[static_cast<size_t>(b)]);

    for (const auto& [i, j] : frame_matches) {
      const int gid = G[static_cast<size_t>(i)].id;
      const int pid = P[static_cast<size_t>(j)].id;
      const auto m = mapping.find(gid);
      if (m != mapping.end() && m->second != pid) ++r.id_switches;
      mapping[gid] = pid;
      ++matches_total;
      iou_sum += iou[static_cast<size_t>(i)][static_cast<size_t>(j)];
      matched_frames[gid]++;
    }
    r.fn += ng - static_cast<long>(frame_matches.size());
    r.fp += np - static_cast<long>(frame_matches.size());
  }

  r.tp = matches_total;
  // convention: an empty ground truth contributes a unit denominator so the
  // formula stays defined
  const double denom = gt_boxes > 0 ? static_cast<double>(gt_boxes) : 1.0;
  r.mota = 1.0 - static_cast<double>(r.fn + r.fp + r.id_switches) / denom;
  if (matches_total > 0) r.motp = iou_sum / static_cast<double>(matches_total);

  r.precision = (r.tp + r.fp) == 0 ? 1.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? 1.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  r.f_measure = (r.precision + r.recall) == 0.0
                    ? 0.0
                    : 2.0 * r.precision * r.recall / (r.precision + r.recall);

  // global identity matching over eligible co-frame counts
  {
    std::vector<int> gid_list, pid_list;
    for (const auto& [id, _] : gt_len) gid_list.push_back(id);
    for (const auto& [id, _] : pred_len) pid_list.push_back(id);
    long idtp = 0;
    if (!gid_list.empty() && !pid_list.empty()) {
      double max_o = 0.0;
      for (const auto& [_, c] : overlap) max_o = std::max(max_o, static_cast<double>(c));
      const int n = static_cast<int>(gid_list.size() + pid_list.size());
      std::vector<std::vector<double>> sq(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(n), max_o));
      for (size_t a = 0; a < gid_list.size(); ++a)
        for (size_t b = 0; b < pid_list.size(); ++b) {
          const auto it = overlap.find({gid_list[a], pid_list[b]});
          const double o = it == overlap.end() ? 0.0 : static_cast<double>(it->second);
          sq[a][b] = max_o - o;
        }
      for (size_t a = 0; a < static_cast<size_t>(n); ++a)
        for (size_t b = 0; b < static_cast<size_t>(n); ++b)
          if (a >= gid_list.size() && b >= pid_list.size()) sq[a][b] = 0.0;
      const std::vector<int> assign = min_cost_assignment(sq);
      for (size_t a = 0; a < gid_list.size(); ++a) {
        const int b = assign[a];
        if (b < 0 || b >= static_cast<int>(pid_list.size())) continue;
        const auto it = overlap.find({gid_list[a], pid_list[static_cast<size_t>(b)]});
        if (it != overlap.end()) idtp += it->second;
      }
    }
    const long denom_id = gt_boxes + pred_boxes;
    r.idf1 = denom_id == 0 ? 1.0 : 2.0 * static_cast<double>(idtp) / static_cast<double>(denom_id);
  }

  // mostly tracked / mostly lost over gt trajectory lifespans
  int mt = 0, ml = 0;
  for (const auto& [id, len] : gt_len) {
    const auto it = matched_frames.find(id);
    const double frac = it == matched_frames.end()
                            ? 0.0
                            : static_cast<double>(it->second) / static_cast<double>(len);
    if (frac >= 0.8) ++mt;        // boundary inclusive
    if (frac < 0.2) ++ml;
  }
  if (r.gt_trajectories > 0) {
    r.m_tracked = 100.0 * mt / r.gt_trajectories;
    r.m_lost = 100.0 * ml / r.gt_trajectories;
  }
  return r;
}

}  // namespace

MetricsReport eval_mot(const std::vector<track::TrackRecord>& tracks,
                       const std::vector<FrameAnnotation>& gts, double iou_thresh) {
  return eval_tracks(tracks, gts, iou_thresh, false);
}

MetricsReport eval_spotting(const std::vector<track::TrackRecord>& tracks,
                            const std::vector<FrameAnnotation>& gts, double iou_thresh) {
  return eval_tracks(tracks, gts, iou_thresh, true);
}

}  // namespace logo::metrics
