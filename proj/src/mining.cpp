#include "logo/mining.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "logo/common.hpp"
#include "logo/rng.hpp"
#include "logo/synthdata.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace logo::mine {

int CodeDictionary::code_of(char ch) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (c >= '0' && c <= '9') return 1 + (c - '0');
  if (c >= 'a' && c <= 'z') return 11 + (c - 'a');
  return -1;
}

char CodeDictionary::char_of(int code) {
  require(code >= 1 && code <= 36, "char_of: code out of range");
  return code <= 10 ? static_cast<char>('0' + code - 1) : static_cast<char>('a' + code - 11);
}

void validate_sequence(const CharSequence& seq, const CodeDictionary& dict) {
  require(static_cast<int>(seq.codes.size()) == dict.len_max, "sequence length != len_max");
  int eos_pos = -1;
  for (int i = 0; i < dict.len_max; ++i) {
    const int c = seq.codes[static_cast<size_t>(i)];
    if (c == CodeDictionary::kEos) {
      require(eos_pos < 0, "sequence has more than one EOS");
      eos_pos = i;
    } else if (c == CodeDictionary::kPadClass) {
      require(eos_pos >= 0, "PAD before EOS");
    } else {
      require(c >= 1 && c <= 36, "invalid character code");
      require(eos_pos < 0, "character code after EOS");
    }
  }
  require(eos_pos >= 0, "sequence has no EOS");
}

CharSequence encode_positive(const std::string& word, const CodeDictionary& dict) {
  require(!word.empty(), "encode_positive: empty word");
  require(static_cast<int>(word.size()) <= dict.len_max - 1,
          "encode_positive: word longer than len_max - 1");
  CharSequence seq;
  seq.codes.assign(static_cast<size_t>(dict.len_max), CodeDictionary::kPadClass);
  for (size_t k = 0; k < word.size(); ++k) {
    const int code = CodeDictionary::code_of(word[k]);
    require(code > 0, std::string("encode_positive: character not in dictionary: '") + word[k] + "'");
    seq.codes[k] = code;
  }
  seq.codes[word.size()] = CodeDictionary::kEos;
  return seq;
}

CharSequence encode_negative(const CodeDictionary& dict) {
  CharSequence seq;
  seq.codes.assign(static_cast<size_t>(dict.len_max), CodeDictionary::kPadClass);
  seq.codes[0] = CodeDictionary::kEos;
  return seq;
}

std::string decode_word(const CharSequence& seq) {
  std::string out;
  for (int c : seq.codes) {
    if (c == CodeDictionary::kEos || c == CodeDictionary::kPadClass) break;
    out.push_back(CodeDictionary::char_of(c));
  }
  return out;
}

CharSequence canonicalize_codes(const std::vector<int>& raw, int len_max) {
  require(static_cast<int>(raw.size()) == len_max, "canonicalize_codes: length mismatch");
  CharSequence seq;
  seq.codes.assign(static_cast<size_t>(len_max), CodeDictionary::kPadClass);
  int stop = len_max - 1;
  for (int i = 0; i < len_max; ++i) {
    const int c = raw[static_cast<size_t>(i)];
    if (c == CodeDictionary::kEos || c == CodeDictionary::kPadClass) {
      stop = i;
      break;
    }
    seq.codes[static_cast<size_t>(i)] = c;
  }
  seq.codes[static_cast<size_t>(stop)] = CodeDictionary::kEos;
  for (int i = stop + 1; i < len_max; ++i)
    seq.codes[static_cast<size_t>(i)] = CodeDictionary::kPadClass;
  return seq;
}

std::vector<int> serialize_codes(const CharSequence& seq) {
  std::vector<int> out(seq.codes.size());
  for (size_t i = 0; i < seq.codes.size(); ++i)
    out[i] = seq.codes[i] == CodeDictionary::kPadClass ? CodeDictionary::kPadSerialized : seq.codes[i];
  return out;
}

CharSequence parse_serialized_codes(const std::vector<int>& codes, const CodeDictionary& dict) {
  CharSequence seq;
  seq.codes.resize(codes.size());
  for (size_t i = 0; i < codes.size(); ++i)
    seq.codes[i] = codes[i] == CodeDictionary::kPadSerialized ? CodeDictionary::kPadClass : codes[i];
  validate_sequence(seq, dict);
  return seq;
}

std::vector<Detection> select_negatives(const std::vector<Detection>& preds,
                                        const std::vector<geom::RotatedQuad>& gts, double h_I,
                                        double h_S) {
  std::vector<Detection> out;
  for (const auto& pred : preds) {
    if (pred.score <= h_S) continue;
    double best = 0.0;
    for (const auto& gt : gts) best = std::max(best, geom::iou_rotated(pred.quad, gt));
    if (best < h_I) out.push_back(pred);
  }
  return out;
}

ArchiveStats build_lsc_dataset(const std::vector<std::string>& sequence_dirs,
                               const DetectFn& detect, const CodeDictionary& dict,
                               const MiningConfig& cfg, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "patches");

  struct Pending {
    img::Image patch;
    CharSequence target;
    bool positive;
    int frame_id;
    geom::RotatedQuad quad;
  };
  std::vector<Pending> samples;

  for (const auto& dir : sequence_dirs) {
    synth::Dataset ds = synth::read_dataset(dir);
    for (int t = 0; t < ds.frames; ++t) {
      const img::Image frame = ds.frame(t);
      const FrameAnnotation& ann = ds.annotations[static_cast<size_t>(t)];

      std::vector<geom::RotatedQuad> gt_quads;
      for (const auto& in : ann.instances) gt_quads.push_back(in.quad);

      // every ground truth becomes a positive; empty transcriptions are
      // dropped because they would be indistinguishable from negatives
      for (const auto& in : ann.instances) {
        if (in.text.empty()) continue;
        if (static_cast<int>(in.text.size()) > dict.len_max - 1) continue;
        Pending p;
        p.patch = geom::roi_rotate(frame, in.quad, cfg.patch_h, cfg.patch_w);
        p.target = encode_positive(in.text, dict);
        p.positive = true;
        p.frame_id = t;
        p.quad = in.quad;
        samples.push_back(std::move(p));
      }

      std::vector<Detection> negs =
          select_negatives(detect(frame), gt_quads, cfg.h_iou, cfg.h_score);
      if (cfg.neg_cap_per_frame >= 0 && static_cast<int>(negs.size()) > cfg.neg_cap_per_frame)
        negs.resize(static_cast<size_t>(cfg.neg_cap_per_frame));
      for (const auto& d : negs) {
        Pending p;
        p.patch = geom::roi_rotate(frame, d.quad, cfg.patch_h, cfg.patch_w);
        p.target = encode_negative(dict);
        p.positive = false;
        p.frame_id = t;
        p.quad = d.quad;
        samples.push_back(std::move(p));
      }
    }
  }

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(cfg.seed);
  rng.shuffle(order);

  std::ofstream jf(fs::path(out_dir) / "samples.jsonl");
  require(static_cast<bool>(jf), "build_lsc_dataset: cannot write samples.jsonl");
  ArchiveStats stats;
  for (size_t k = 0; k < order.size(); ++k) {
    const Pending& p = samples[order[k]];
    char name[48];
    std::snprintf(name, sizeof(name), "patches/%06zu.png", k);
    img::write_png((fs::path(out_dir) / name).string(), p.patch);
    json line;
    line["patch"] = name;
    line["codes"] = serialize_codes(p.target);
    line["polarity"] = p.positive ? "pos" : "neg";
    line["frame_id"] = p.frame_id;
    json quad = json::array();
    for (const auto& v : p.quad.v) {
      quad.push_back(v.x);
      quad.push_back(v.y);
    }
    line["quad"] = quad;
    jf << line.dump() << "\n";
    (p.positive ? stats.positives : stats.negatives)++;
  }
  return stats;
}

std::vector<ArchiveSample> read_archive(const std::string& dir, const CodeDictionary& dict) {
  std::ifstream jf(fs::path(dir) / "samples.jsonl");
  require(static_cast<bool>(jf), "read_archive: missing samples.jsonl in " + dir);
  std::vector<ArchiveSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(jf, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      ArchiveSample s;
      s.patch_path = j.at("patch").get<std::string>();
      s.target = parse_serialized_codes(j.at("codes").get<std::vector<int>>(), dict);
      s.positive = j.at("polarity").get<std::string>() == "pos";
      s.frame_id = j.at("frame_id").get<int>();
      const auto& q = j.at("quad");
      for (int i = 0; i < 4; ++i)
        s.quad.v[static_cast<size_t>(i)] = {q[static_cast<size_t>(2 * i)].get<double>(),
                                            q[static_cast<size_t>(2 * i + 1)].get<double>()};
      out.push_back(std::move(s));
    } catch (const std::exception& ex) {
      throw std::runtime_error("read_archive: parse error at samples.jsonl line " +
                               std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

img::Image load_patch(const std::string& archive_dir, const ArchiveSample& sample) {
  return img::read_png((fs::path(archive_dir) / sample.patch_path).string());
}

}  // namespace logo::mine
