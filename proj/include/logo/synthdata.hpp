#pragma once

// Deterministic synthetic video-text generator: moving words rendered from an
// embedded bitmap font, optional degradations (contrast, blur, occlusion) and
// text-like distractor patterns, with exact per-frame annotations.

#include <optional>
#include <string>
#include <vector>

#include "logo/raster.hpp"
#include "logo/types.hpp"

namespace logo::synth {

struct OcclusionSpan {
  int from = 0;      // inclusive frame
  int to = -1;       // inclusive frame
  double fraction = 1.0;  // fraction of the word width covered, from the left
};

struct WordTrack {
  std::string word;
  double x0 = 0.0, y0 = 0.0;      // center at frame 0
  double vx = 0.0, vy = 0.0;      // pixels per frame
  double theta0 = 0.0, vtheta = 0.0;
  double height0 = 14.0, vheight = 0.0;  // glyph-row height in pixels
  double contrast = 0.8;          // 0..1 against the background level
  double blur_sigma = 0.0;        // sprite blur before compositing
  std::vector<OcclusionSpan> occlusions;
};

// Text-like pattern that is rendered but never annotated.
struct Distractor {
  int rings = 2;                  // count of side-by-side rings
  double x0 = 0.0, y0 = 0.0, vx = 0.0, vy = 0.0;
  double radius = 5.0;
  double stroke = 1.6;
  double contrast = 0.8;
};

struct SceneScript {
  int width = 160, height = 96;
  int frames = 16;
  uint64_t seed = 1;
  double background = 40.0;       // base gray level
  double noise = 6.0;             // uniform +- noise amplitude
  std::vector<WordTrack> tracks;
  std::vector<Distractor> distractors;
};

struct Sequence {
  std::vector<img::Image> frames;
  std::vector<FrameAnnotation> annotations;
};

// Deterministic given the script (which embeds the seed). Ground truth quads
// reflect the un-degraded word extent; blur and occlusion are applied after
// the quads are computed. Throws on out-of-dictionary characters.
Sequence generate_sequence(const SceneScript& script);

// Dataset layout: manifest.json {w_t,h_t,T,seed}, frames/%06d.png,
// ann.jsonl with one object per frame.
void write_dataset(const Sequence& seq, const SceneScript& script, const std::string& dir);

struct Dataset {
  int width = 0, height = 0, frames = 0;
  uint64_t seed = 0;
  std::string dir;
  std::vector<FrameAnnotation> annotations;
  img::Image frame(int t) const;  // loads frames/%06d.png
};

Dataset read_dataset(const std::string& dir);

// All sequence directories under `dir` (itself, when it holds a manifest).
std::vector<std::string> list_sequences(const std::string& dir);

// Renders one word into a patch of the given size with the same glyph
// pipeline the generator uses; mask marks glyph foreground pixels.
struct WordPatch {
  img::Image patch;
  std::vector<uint8_t> mask;  // patch_w*patch_h, 1 = glyph
};
WordPatch render_word_patch(const std::string& word, int patch_w, int patch_h,
                            double contrast = 0.85, double background = 40.0);

// JSON round trip for scripts (CLI input format).
SceneScript script_from_json_text(const std::string& text);
std::string script_to_json_text(const SceneScript& script);

// ---- reference scene builders (desk-scale presets) ----
// train-det: words only, no distractors (the detector never learns to reject
// them); mine: words plus ring distractors for negative mining; eval-clean:
// degradation-free, always-visible; bench-distractor: low-res words plus
// rings; bench-crossing: two identical words crossing paths; occlusion-gap:
// one word fully hidden for a few frames.
std::vector<SceneScript> preset_scripts(const std::string& name, uint64_t seed);

}  // namespace logo::synth
