#include "logo/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "logo/common.hpp"
#include "logo/mining.hpp"
#include "logo/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace logo::synth {

namespace {

// 5x7 glyph bitmaps for '0'-'9','a'-'z'; one byte per row, low 5 bits used.
constexpr uint8_t kFont[36][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // a
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // b
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // c
    {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // d
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // e
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // f
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // g
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // h
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // i
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // j
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // k
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // l
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // m
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // n
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // o
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // p
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // r
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // s
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // t
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // u
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // v
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // w
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // x
    {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},  // y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // z
};

constexpr int kGlyphW = 5, kGlyphH = 7, kAdvance = 6;

int glyph_index(char ch) {
  if (ch >= '0' && ch <= '9') return ch - '0';
  if (ch >= 'a' && ch <= 'z') return 10 + (ch - 'a');
  if (ch >= 'A' && ch <= 'Z') return 10 + (ch - 'A');
  return -1;
}

// Word mask at base resolution with a 1-cell margin on every side.
struct BaseMask {
  int w = 0, h = 0;
  std::vector<double> m;  // 0/1
  double at(int x, int y) const { return m[static_cast<size_t>(y) * w + x]; }
};

BaseMask word_mask(const std::string& word) {
  require(!word.empty(), "generator: empty word");
  BaseMask bm;
  bm.w = kAdvance * static_cast<int>(word.size()) - 1 + 2;
  bm.h = kGlyphH + 2;
  bm.m.assign(static_cast<size_t>(bm.w) * bm.h, 0.0);
  for (size_t i = 0; i < word.size(); ++i) {
    const int gi = glyph_index(word[i]);
    require(gi >= 0, std::string("generator: character not in dictionary: '") + word[i] + "'");
    for (int r = 0; r < kGlyphH; ++r)
      for (int cbit = 0; cbit < kGlyphW; ++cbit)
        if (kFont[gi][r] & (1 << (kGlyphW - 1 - cbit)))
          bm.m[static_cast<size_t>(r + 1) * bm.w + (1 + static_cast<int>(i) * kAdvance + cbit)] = 1.0;
  }
  return bm;
}

double sample_mask(const BaseMask& bm, double x, double y) {
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      if (xi < 0 || xi >= bm.w || yi < 0 || yi >= bm.h) continue;
      acc += (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay) * bm.at(xi, yi);
    }
  // steepen the reconstruction so upscaled strokes keep crisp edges
  acc = (acc - 0.25) / 0.5;
  acc = std::min(1.0, std::max(0.0, acc));
  return acc * acc * (3.0 - 2.0 * acc);
}

struct TrackPose {
  geom::Vec2 center;
  double theta = 0.0;
  double scale = 1.0;  // base cells -> pixels
};

TrackPose pose_at(const WordTrack& tr, int t) {
  TrackPose p;
  p.center = {tr.x0 + tr.vx * t, tr.y0 + tr.vy * t};
  p.theta = tr.theta0 + tr.vtheta * t;
  const double hg = std::max(2.0, tr.height0 + tr.vheight * t);
  p.scale = hg / kGlyphH;
  return p;
}

geom::RotatedQuad quad_for(const BaseMask& bm, const TrackPose& p) {
  geom::OrientedBox b;
  b.cx = p.center.x;
  b.cy = p.center.y;
  b.w = bm.w * p.scale;
  b.h = bm.h * p.scale;
  b.theta = geom::wrap_angle(p.theta);
  return geom::quad_from_obox(b);
}

void blur_alpha(std::vector<double>& alpha, int w, int h, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  std::vector<double> tmp(alpha.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xi = x + i;
        if (xi < 0 || xi >= w) continue;
        acc += k[static_cast<size_t>(i + radius)] * alpha[static_cast<size_t>(y) * w + xi];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yi = y + i;
        if (yi < 0 || yi >= h) continue;
        acc += k[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yi) * w + x];
      }
      alpha[static_cast<size_t>(y) * w + x] = acc;
    }
}

// Fraction of the quad area that lies inside the frame rectangle.
double visible_fraction(const geom::RotatedQuad& q, int w, int h) {
  const geom::RotatedQuad frame{{geom::Vec2{0, 0}, {static_cast<double>(w), 0},
                                 {static_cast<double>(w), static_cast<double>(h)},
                                 {0, static_cast<double>(h)}}};
  const double a = geom::area(q);
  if (a <= 0.0) return 0.0;
  const double i = geom::iou_rotated(q, frame);
  // recover intersection from iou: i = inter / (a + af - inter)
  const double af = static_cast<double>(w) * h;
  const double inter = i * (a + af) / (1.0 + i);
  return inter / a;
}

}  // namespace

Sequence generate_sequence(const SceneScript& script) {
  require(script.width > 0 && script.height > 0 && script.frames >= 0,
          "generator: bad script dimensions");
  Sequence out;
  out.frames.reserve(static_cast<size_t>(script.frames));
  out.annotations.reserve(static_cast<size_t>(script.frames));

  std::vector<BaseMask> masks;
  masks.reserve(script.tracks.size());
  for (const auto& tr : script.tracks) masks.push_back(word_mask(tr.word));

  for (int t = 0; t < script.frames; ++t) {
    const int W = script.width, H = script.height;
    std::vector<double> canvas(static_cast<size_t>(W) * H, script.background);
    Rng noise_rng(script.seed * 1000003ULL + static_cast<uint64_t>(t));
    if (script.noise > 0)
      for (auto& v : canvas) v += noise_rng.uniform(-script.noise, script.noise);

    FrameAnnotation ann;
    ann.frame_id = t;

    for (size_t k = 0; k < script.tracks.size(); ++k) {
      const WordTrack& tr = script.tracks[k];
      const BaseMask& bm = masks[k];
      const TrackPose pose = pose_at(tr, t);
      const geom::RotatedQuad quad = quad_for(bm, pose);

      // rasterize word alpha over the quad's bounding box
      double minx = quad.v[0].x, maxx = minx, miny = quad.v[0].y, maxy = miny;
      for (const auto& p : quad.v) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
      }
      const int pad = 2 + static_cast<int>(std::ceil(3.0 * tr.blur_sigma));
      const int bx0 = std::max(0, static_cast<int>(std::floor(minx)) - pad);
      const int bx1 = std::min(W - 1, static_cast<int>(std::ceil(maxx)) + pad);
      const int by0 = std::max(0, static_cast<int>(std::floor(miny)) - pad);
      const int by1 = std::min(H - 1, static_cast<int>(std::ceil(maxy)) + pad);
      if (bx0 > bx1 || by0 > by1) continue;
      const int bw = bx1 - bx0 + 1, bh = by1 - by0 + 1;
      std::vector<double> alpha(static_cast<size_t>(bw) * bh, 0.0);
      const double c = std::cos(pose.theta), s = std::sin(pose.theta);

      // active occlusion fraction for this frame
      double occ = 0.0;
      for (const auto& sp : tr.occlusions)
        if (t >= sp.from && t <= sp.to) occ = std::max(occ, sp.fraction);

      for (int y = by0; y <= by1; ++y)
        for (int x = bx0; x <= bx1; ++x) {
          const double rx = (x + 0.5) - pose.center.x;
          const double ry = (y + 0.5) - pose.center.y;
          const double bxc = (rx * c + ry * s) / pose.scale + bm.w / 2.0;
          const double byc = (-rx * s + ry * c) / pose.scale + bm.h / 2.0;
          if (bxc < -1 || bxc > bm.w + 1 || byc < -1 || byc > bm.h + 1) continue;
          double a = sample_mask(bm, bxc, byc);
          if (occ > 0.0 && bxc < occ * bm.w) a = 0.0;  // occluder hides glyphs
          alpha[static_cast<size_t>(y - by0) * bw + (x - bx0)] = a;
        }
      blur_alpha(alpha, bw, bh, tr.blur_sigma);
      const double fg = script.background + tr.contrast * (255.0 - script.background);
      for (int y = by0; y <= by1; ++y)
        for (int x = bx0; x <= bx1; ++x) {
          const double a = alpha[static_cast<size_t>(y - by0) * bw + (x - bx0)];
          if (a <= 0.0) continue;
          double& px = canvas[static_cast<size_t>(y) * W + x];
          px = px * (1.0 - a) + fg * a;
        }

      // ground truth reflects the un-degraded extent
      if (visible_fraction(quad, W, H) >= 0.5) {
        // legibility: occluder covering more than half of the glyph cells
        double covered = 0.0, total = 0.0;
        for (int yy = 0; yy < bm.h; ++yy)
          for (int xx = 0; xx < bm.w; ++xx)
            if (bm.at(xx, yy) > 0.5) {
              total += 1.0;
              if (occ > 0.0 && xx + 0.5 < occ * bm.w) covered += 1.0;
            }
        const bool legible = total > 0.0 && covered / total <= 0.5;
        std::string lower = tr.word;
        for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        ann.instances.push_back(Instance{quad, lower, static_cast<int>(k), legible});
      }
    }

    for (const auto& d : script.distractors) {
      const double cx = d.x0 + d.vx * t, cy = d.y0 + d.vy * t;
      const double fg = script.background + d.contrast * (255.0 - script.background);
      const double span = (d.rings - 1) * 2.6 * d.radius;
      for (int i = 0; i < d.rings; ++i) {
        const double rcx = cx - span / 2.0 + i * 2.6 * d.radius;
        const int x0 = std::max(0, static_cast<int>(std::floor(rcx - d.radius - d.stroke)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(rcx + d.radius + d.stroke)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - d.radius - d.stroke)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + d.radius + d.stroke)));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dist = std::hypot(x + 0.5 - rcx, y + 0.5 - cy);
            const double a = std::max(0.0, 1.0 - std::abs(dist - d.radius) / (d.stroke * 0.5));
            if (a <= 0.0) continue;
            double& px = canvas[static_cast<size_t>(y) * W + x];
            px = px * (1.0 - a) + fg * a;
          }
      }
    }

    img::Image frame(W, H, 1);
    for (size_t i = 0; i < canvas.size(); ++i)
      frame.px[i] = static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, canvas[i]))));
    out.frames.push_back(std::move(frame));
    out.annotations.push_back(std::move(ann));
  }
  return out;
}

// ---------------- dataset io ----------------

namespace {

json quad_to_json(const geom::RotatedQuad& q) {
  json a = json::array();
  for (const auto& p : q.v) {
    a.push_back(p.x);
    a.push_back(p.y);
  }
  return a;
}

geom::RotatedQuad quad_from_json(const json& a) {
  require(a.is_array() && a.size() == 8, "quad must be an 8-number array");
  geom::RotatedQuad q;
  for (int i = 0; i < 4; ++i)
    q.v[static_cast<size_t>(i)] = {a[static_cast<size_t>(2 * i)].get<double>(),
                                   a[static_cast<size_t>(2 * i + 1)].get<double>()};
  return q;
}

}  // namespace

void write_dataset(const Sequence& seq, const SceneScript& script, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  json manifest;
  manifest["w_t"] = script.width;
  manifest["h_t"] = script.height;
  manifest["T"] = script.frames;
  manifest["seed"] = script.seed;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  require(static_cast<bool>(mf), "write_dataset: cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream af(fs::path(dir) / "ann.jsonl");
  require(static_cast<bool>(af), "write_dataset: cannot write ann.jsonl in " + dir);
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", t);
    img::write_png((fs::path(dir) / "frames" / name).string(), seq.frames[t]);
    json line;
    line["frame_id"] = seq.annotations[t].frame_id;
    json insts = json::array();
    for (const auto& in : seq.annotations[t].instances) {
      json j;
      j["quad"] = quad_to_json(in.quad);
      j["text"] = in.text;
      j["track_id"] = in.track_id;
      j["legible"] = in.legible;
      insts.push_back(j);
    }
    line["instances"] = insts;
    af << line.dump() << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  Dataset ds;
  ds.dir = dir;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  require(static_cast<bool>(mf), "read_dataset: missing manifest.json in " + dir);
  json manifest = json::parse(mf);
  ds.width = manifest.at("w_t").get<int>();
  ds.height = manifest.at("h_t").get<int>();
  ds.frames = manifest.at("T").get<int>();
  ds.seed = manifest.at("seed").get<uint64_t>();

  std::ifstream af(fs::path(dir) / "ann.jsonl");
  require(static_cast<bool>(af), "read_dataset: missing ann.jsonl in " + dir);
  std::string line;
  int lineno = 0;
  while (std::getline(af, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      FrameAnnotation ann;
      ann.frame_id = j.at("frame_id").get<int>();
      for (const auto& e : j.at("instances")) {
        Instance in;
        in.quad = quad_from_json(e.at("quad"));
        in.text = e.at("text").get<std::string>();
        in.track_id = e.at("track_id").get<int>();
        in.legible = e.at("legible").get<bool>();
        ann.instances.push_back(std::move(in));
      }
      ds.annotations.push_back(std::move(ann));
    } catch (const std::exception& ex) {
      throw std::runtime_error("read_dataset: parse error at ann.jsonl line " +
                               std::to_string(lineno) + ": " + ex.what());
    }
  }
  require(static_cast<int>(ds.annotations.size()) == ds.frames,
          "read_dataset: manifest frame count does not match ann.jsonl");
  return ds;
}

img::Image Dataset::frame(int t) const {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.png", t);
  return img::read_png((fs::path(dir) / "frames" / name).string());
}

std::vector<std::string> list_sequences(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "manifest.json")) return {dir};
  std::vector<std::string> out;
  require(fs::is_directory(dir), "list_sequences: not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  require(!out.empty(), "list_sequences: no sequences under " + dir);
  return out;
}

WordPatch render_word_patch(const std::string& word, int patch_w, int patch_h, double contrast,
                            double background) {
  const BaseMask bm = word_mask(word);
  WordPatch out;
  out.patch = img::Image(patch_w, patch_h, 1);
  out.mask.assign(static_cast<size_t>(patch_w) * patch_h, 0);
  const double fg = background + contrast * (255.0 - background);
  for (int y = 0; y < patch_h; ++y)
    for (int x = 0; x < patch_w; ++x) {
      const double bxc = (x + 0.5) / patch_w * bm.w;
      const double byc = (y + 0.5) / patch_h * bm.h;
      const double a = sample_mask(bm, bxc, byc);
      const double v = background * (1.0 - a) + fg * a;
      out.patch.at(x, y) = static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
      if (a >= 0.5) out.mask[static_cast<size_t>(y) * patch_w + x] = 1;
    }
  return out;
}

// ---------------- script json ----------------

SceneScript script_from_json_text(const std::string& text) {
  json j = json::parse(text);
  SceneScript s;
  s.width = j.value("w", 160);
  s.height = j.value("h", 96);
  s.frames = j.value("frames", 16);
  s.seed = j.value("seed", static_cast<uint64_t>(1));
  s.background = j.value("background", 40.0);
  s.noise = j.value("noise", 6.0);
  for (const auto& t : j.value("tracks", json::array())) {
    WordTrack tr;
    tr.word = t.at("word").get<std::string>();
    tr.x0 = t.value("x0", 0.0);
    tr.y0 = t.value("y0", 0.0);
    tr.vx = t.value("vx", 0.0);
    tr.vy = t.value("vy", 0.0);
    tr.theta0 = t.value("theta0", 0.0);
    tr.vtheta = t.value("vtheta", 0.0);
    tr.height0 = t.value("height0", 14.0);
    tr.vheight = t.value("vheight", 0.0);
    tr.contrast = t.value("contrast", 0.8);
    tr.blur_sigma = t.value("blur_sigma", 0.0);
    for (const auto& o : t.value("occlusions", json::array())) {
      OcclusionSpan sp;
      sp.from = o.at("from").get<int>();
      sp.to = o.at("to").get<int>();
      sp.fraction = o.value("fraction", 1.0);
      tr.occlusions.push_back(sp);
    }
    s.tracks.push_back(std::move(tr));
  }
  for (const auto& d : j.value("distractors", json::array())) {
    Distractor ds;
    ds.rings = d.value("rings", 2);
    ds.x0 = d.value("x0", 0.0);
    ds.y0 = d.value("y0", 0.0);
    ds.vx = d.value("vx", 0.0);
    ds.vy = d.value("vy", 0.0);
    ds.radius = d.value("radius", 5.0);
    ds.stroke = d.value("stroke", 1.6);
    ds.contrast = d.value("contrast", 0.8);
    s.distractors.push_back(ds);
  }
  return s;
}

std::string script_to_json_text(const SceneScript& s) {
  json j;
  j["w"] = s.width;
  j["h"] = s.height;
  j["frames"] = s.frames;
  j["seed"] = s.seed;
  j["background"] = s.background;
  j["noise"] = s.noise;
  json tracks = json::array();
  for (const auto& t : s.tracks) {
    json tj;
    tj["word"] = t.word;
    tj["x0"] = t.x0;
    tj["y0"] = t.y0;
    tj["vx"] = t.vx;
    tj["vy"] = t.vy;
    tj["theta0"] = t.theta0;
    tj["vtheta"] = t.vtheta;
    tj["height0"] = t.height0;
    tj["vheight"] = t.vheight;
    tj["contrast"] = t.contrast;
    tj["blur_sigma"] = t.blur_sigma;
    json occ = json::array();
    for (const auto& o : t.occlusions) {
      json oj;
      oj["from"] = o.from;
      oj["to"] = o.to;
      oj["fraction"] = o.fraction;
      occ.push_back(oj);
    }
    tj["occlusions"] = occ;
    tracks.push_back(tj);
  }
  j["tracks"] = tracks;
  json dis = json::array();
  for (const auto& d : s.distractors) {
    json dj;
    dj["rings"] = d.rings;
    dj["x0"] = d.x0;
    dj["y0"] = d.y0;
    dj["vx"] = d.vx;
    dj["vy"] = d.vy;
    dj["radius"] = d.radius;
    dj["stroke"] = d.stroke;
    dj["contrast"] = d.contrast;
    dis.push_back(dj);
  }
  j["distractors"] = dis;
  return j.dump(2);
}

// ---------------- presets ----------------

namespace {

std::string random_word(Rng& rng, int min_len, int max_len) {
  static const char* alphabet = "0123456789abcdefghijklmnopqrstuvwxyz";
  const int len = min_len + rng.uniform_int(max_len - min_len + 1);
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(alphabet[rng.uniform_int(36)]);
  return w;
}

// Deterministic word pool covering every dictionary character several times
// across word lengths 2..6; recognizer training needs full glyph coverage.
std::vector<std::string> coverage_pool(Rng& rng, int count) {
  static const char* alphabet = "0123456789abcdefghijklmnopqrstuvwxyz";
  std::vector<int> deck;
  std::vector<std::string> out;
  std::string cur;
  int target = 2 + rng.uniform_int(5);
  while (static_cast<int>(out.size()) < count) {
    if (deck.empty()) {
      for (int i = 0; i < 36; ++i) deck.push_back(i);
      rng.shuffle(deck);
    }
    cur.push_back(alphabet[deck.back()]);
    deck.pop_back();
    if (static_cast<int>(cur.size()) == target) {
      out.push_back(cur);
      cur.clear();
      target = 2 + rng.uniform_int(5);
    }
  }
  return out;
}

WordTrack make_track(Rng& rng, const std::string& word, double x, double y, double height,
                     double contrast, double blur) {
  WordTrack tr;
  tr.word = word;
  tr.x0 = x;
  tr.y0 = y;
  tr.vx = rng.uniform(-1.2, 1.2);
  tr.vy = rng.uniform(-0.6, 0.6);
  tr.theta0 = rng.uniform(-0.28, 0.28);
  tr.vtheta = rng.uniform(-0.008, 0.008);
  tr.height0 = height;
  tr.contrast = contrast;
  tr.blur_sigma = blur;
  return tr;
}

}  // namespace

std::vector<SceneScript> preset_scripts(const std::string& name, uint64_t seed) {
  std::vector<SceneScript> out;
  auto base = [&](uint64_t sub) {
    SceneScript s;
    s.width = 160;
    s.height = 96;
    s.frames = 16;
    s.seed = seed * 7919ULL + sub;
    return s;
  };

  if (name == "train-det") {
    for (int i = 0; i < 8; ++i) {
      SceneScript s = base(static_cast<uint64_t>(i));
      Rng rng(s.seed);
      const int words = 2 + rng.uniform_int(2);
      for (int k = 0; k < words; ++k) {
        const double y = 22.0 + 26.0 * k + rng.uniform(-4, 4);
        const double x = rng.uniform(46, 114);
        const double h = rng.uniform(10, 18);
        const double contrast = rng.uniform(0.6, 0.9);
        const double blur = (k % 2 == 0) ? 0.0 : rng.uniform(0.0, 0.5);
        s.tracks.push_back(make_track(rng, random_word(rng, 2, 5), x, y, h, contrast, blur));
      }
      out.push_back(std::move(s));
    }
  } else if (name == "mine") {
    // many short sequences: the classifier needs vocabulary breadth far more
    // than trajectory length
    Rng pool_rng(seed * 7919ULL + 99);
    const std::vector<std::string> pool = coverage_pool(pool_rng, 110);
    size_t next_word = 0;
    for (int i = 0; i < 36; ++i) {
      SceneScript s = base(100 + static_cast<uint64_t>(i));
      s.frames = 6;
      Rng rng(s.seed);
      for (int k = 0; k < 3; ++k) {
        const double y = 18.0 + 26.0 * k + rng.uniform(-3, 3);
        const double x = rng.uniform(46, 114);
        s.tracks.push_back(make_track(rng, pool[next_word++ % pool.size()], x, y,
                                      rng.uniform(11, 18), rng.uniform(0.6, 0.9),
                                      rng.uniform(0.0, 0.4)));
      }
      if (i % 3 != 0) {
        const int nd = 1 + rng.uniform_int(2);
        for (int k = 0; k < nd; ++k) {
          Distractor d;
          d.rings = 2 + rng.uniform_int(2);
          d.x0 = 30.0 + 90.0 * k + rng.uniform(-6, 6);
          d.y0 = rng.uniform(84, 90);
          d.vx = rng.uniform(-1.0, 1.0);
          d.vy = rng.uniform(-0.3, 0.3);
          d.radius = rng.uniform(4.0, 6.5);
          d.stroke = rng.uniform(1.6, 2.4);
          d.contrast = rng.uniform(0.65, 0.9);
          s.distractors.push_back(d);
        }
      }
      out.push_back(std::move(s));
    }
  } else if (name == "eval-clean") {
    for (int i = 0; i < 3; ++i) {
      SceneScript s = base(200 + static_cast<uint64_t>(i));
      s.noise = 4.0;
      Rng rng(s.seed);
      for (int k = 0; k < 2; ++k) {
        WordTrack tr = make_track(rng, random_word(rng, 3, 5), rng.uniform(60, 100),
                                  30.0 + 34.0 * k, rng.uniform(12, 17), 0.85, 0.0);
        tr.vx = rng.uniform(-0.8, 0.8);
        tr.vy = rng.uniform(-0.3, 0.3);
        s.tracks.push_back(std::move(tr));
      }
      out.push_back(std::move(s));
    }
  } else if (name == "bench-distractor") {
    SceneScript s = base(300);
    s.frames = 20;
    Rng rng(s.seed);
    s.tracks.push_back(make_track(rng, random_word(rng, 3, 5), rng.uniform(60, 100), 22.0,
                                  16.0, 0.85, 0.0));
    // low-resolution words: readable but degraded
    for (int k = 0; k < 2; ++k) {
      WordTrack tr = make_track(rng, random_word(rng, 3, 4), rng.uniform(55, 105), 46.0 + 16.0 * k,
                                10.0, 0.55, 0.25);
      tr.vtheta = 0.0;
      tr.theta0 = rng.uniform(-0.12, 0.12);
      s.tracks.push_back(std::move(tr));
    }
    for (int k = 0; k < 2; ++k) {
      Distractor d;
      d.rings = 2 + k;
      d.x0 = 36.0 + 88.0 * k;
      d.y0 = 86.0;
      d.vx = rng.uniform(-0.8, 0.8);
      d.radius = rng.uniform(4.5, 6.0);
      d.stroke = rng.uniform(1.6, 2.2);
      d.contrast = 0.75;
      s.distractors.push_back(d);
    }
    out.push_back(std::move(s));
  } else if (name == "bench-crossing") {
    SceneScript s = base(400);
    s.frames = 20;
    Rng rng(s.seed);
    const std::string word = random_word(rng, 3, 4);
    WordTrack a = make_track(rng, word, 40, 42, 14.0, 0.85, 0.0);
    a.vx = 4.0;
    a.vy = 0.0;
    a.theta0 = 0.0;
    a.vtheta = 0.0;
    WordTrack b = a;
    b.x0 = 120;
    b.y0 = 54;
    b.vx = -4.0;
    s.tracks.push_back(a);
    s.tracks.push_back(b);
    out.push_back(std::move(s));
  } else if (name == "occlusion-gap") {
    SceneScript s = base(500);
    s.frames = 24;
    Rng rng(s.seed);
    WordTrack a = make_track(rng, random_word(rng, 3, 5), 60, 30, 14.0, 0.85, 0.0);
    WordTrack b = make_track(rng, random_word(rng, 3, 5), 90, 64, 14.0, 0.85, 0.0);
    b.occlusions.push_back(OcclusionSpan{10, 14, 1.0});
    s.tracks.push_back(a);
    s.tracks.push_back(b);
    out.push_back(std::move(s));
  } else {
    throw std::runtime_error("unknown preset: " + name);
  }
  return out;
}

}  // namespace logo::synth
