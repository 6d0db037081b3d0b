#include "eatr/data.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "eatr/errors.hpp"
#include "eatr/rng.hpp"
#include "eatr/util.hpp"

namespace eatr::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32le(const std::string& s, size_t off) {
  return uint32_t(uint8_t(s[off])) | uint32_t(uint8_t(s[off + 1])) << 8 |
         uint32_t(uint8_t(s[off + 2])) << 16 |
         uint32_t(uint8_t(s[off + 3])) << 24;
}

}  // namespace

std::string encode_feature_matrix(const Mat<float>& m) {
  std::string buf;
  buf.reserve(12 + 4 * m.size());
  buf.append("EATF", 4);
  put_u32le(buf, uint32_t(m.rows));
  put_u32le(buf, uint32_t(m.cols));
  for (float x : m.v) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32le(buf, bits);
  }
  return buf;
}

Mat<float> decode_feature_matrix(const std::string& buf, size_t& offset) {
  if (buf.size() < offset + 12 || buf.compare(offset, 4, "EATF") != 0)
    throw FormatError("bad magic, not a feature blob");
  const uint32_t rows = get_u32le(buf, offset + 4);
  const uint32_t cols = get_u32le(buf, offset + 8);
  if (rows > (1u << 30) || cols > (1u << 30))
    throw FormatError("unreasonable dimensions in feature header");
  const size_t need = 12 + 4 * size_t(rows) * size_t(cols);
  if (buf.size() - offset < need) {
    std::ostringstream msg;
    msg << "payload length mismatch, expected " << need << " bytes, got "
        << (buf.size() - offset);
    throw FormatError(msg.str());
  }
  Mat<float> m{int(rows), int(cols)};
  for (size_t i = 0; i < m.v.size(); ++i) {
    const uint32_t bits = get_u32le(buf, offset + 12 + 4 * i);
    std::memcpy(&m.v[i], &bits, 4);
  }
  offset += need;
  return m;
}

void write_feature_matrix(const std::string& path, const Mat<float>& m) {
  util::atomic_write_file(path, encode_feature_matrix(m));
}

Mat<float> read_feature_matrix(const std::string& path) {
  const std::string s = util::read_file(path);
  size_t offset = 0;
  try {
    Mat<float> m = decode_feature_matrix(s, offset);
    if (offset != s.size())
      throw FormatError("payload length mismatch, trailing bytes");
    return m;
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void GenConfig::validate() const {
  if (num_samples <= 0) throw ConfigError("gen: num_samples must be positive");
  if (l_v < 8 || l_s < 1 || d_in < 1)
    throw ConfigError("gen: sequence lengths and feature dim too small");
  if (min_events < 2 || max_events < min_events || max_events > l_v / 4)
    throw ConfigError(
        "gen: min_events/max_events must satisfy 2 <= min <= max <= l_v/4");
  if (noise_sigma < 0) throw ConfigError("gen: noise_sigma must be >= 0");
}

namespace {

struct SynthSample {
  json record;
  std::string vid;
  Mat<float> video;
  Mat<float> sentence;
};

SynthSample make_sample(const GenConfig& cfg, int idx) {
  Rng rng(derive_seed(cfg.seed, uint64_t(idx)));
  const int events = int(rng.uniform_int(cfg.min_events, cfg.max_events));

  // contiguous blocks of >= 3 frames: rejection-sample the cut points
  std::vector<int> starts;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 100000)
      throw ValidationError("gen: could not split frames into blocks");
    std::vector<int> cuts(size_t(events) - 1);
    for (auto& c : cuts) c = int(rng.uniform_int(1, cfg.l_v - 1));
    std::sort(cuts.begin(), cuts.end());
    bool ok = true;
    int prev = 0;
    for (int c : cuts) {
      if (c - prev < 3) ok = false;
      prev = c;
    }
    if (cfg.l_v - prev < 3) ok = false;
    if (ok) {
      starts.assign(1, 0);
      starts.insert(starts.end(), cuts.begin(), cuts.end());
      break;
    }
  }

  Mat<float> protos(events, cfg.d_in);
  for (int e = 0; e < events; ++e) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int c = 0; c < cfg.d_in; ++c) {
        const double x = rng.normal();
        protos(e, c) = float(x);
        norm += x * x;
      }
    } while (norm < 1e-18);
    const float inv = float(1.0 / std::sqrt(norm));
    for (int c = 0; c < cfg.d_in; ++c) protos(e, c) *= inv;
  }

  const int target = int(rng.uniform_int(0, events - 1));

  SynthSample out;
  out.video = Mat<float>(cfg.l_v, cfg.d_in);
  for (int f = 0; f < cfg.l_v; ++f) {
    int block = events - 1;
    for (int e = 0; e + 1 < events; ++e) {
      if (f < starts[size_t(e) + 1]) {
        block = e;
        break;
      }
    }
    for (int c = 0; c < cfg.d_in; ++c)
      out.video(f, c) =
          protos(block, c) + float(rng.normal(0.0, cfg.noise_sigma));
  }
  out.sentence = Mat<float>(cfg.l_s, cfg.d_in);
  for (int tkn = 0; tkn < cfg.l_s; ++tkn)
    for (int c = 0; c < cfg.d_in; ++c)
      out.sentence(tkn, c) =
          protos(target, c) + float(rng.normal(0.0, cfg.noise_sigma));

  char vid[32];
  std::snprintf(vid, sizeof(vid), "synth_%06d", idx);
  out.vid = vid;

  // one frame per second, so windows in seconds equal frame indices
  const int t_start = starts[size_t(target)];
  const int t_end =
      (target + 1 < events) ? starts[size_t(target) + 1] : cfg.l_v;

  json meta;
  meta["event_starts"] = starts;
  std::vector<int> proto_ids(size_t(events), 0);
  for (int e = 0; e < events; ++e) proto_ids[size_t(e)] = e;
  meta["prototype_ids"] = proto_ids;
  meta["target_event"] = target;

  out.record["qid"] = idx;
  out.record["vid"] = out.vid;
  out.record["duration"] = double(cfg.l_v);
  out.record["relevant_windows"] = {{double(t_start), double(t_end)}};
  out.record["video_feature_ref"] = "features/" + out.vid + "_video.eatf";
  out.record["sentence_feature_ref"] =
      "features/" + out.vid + "_sentence.eatf";
  out.record["meta"] = meta;
  return out;
}

}  // namespace

void generate_synthetic(const GenConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "features");

  std::vector<SynthSample> samples(size_t(cfg.num_samples));
  util::parallel_for(size_t(cfg.num_samples), 8,
                     [&](size_t begin, size_t end, int) {
                       for (size_t i = begin; i < end; ++i)
                         samples[i] = make_sample(cfg, int(i));
                     });

  std::string jsonl;
  for (const auto& s : samples) {
    write_feature_matrix((fs::path(out_dir) / "features" /
                          (s.vid + "_video.eatf")).string(),
                         s.video);
    write_feature_matrix((fs::path(out_dir) / "features" /
                          (s.vid + "_sentence.eatf")).string(),
                         s.sentence);
    jsonl += s.record.dump();
    jsonl += '\n';
  }
  util::atomic_write_file((fs::path(out_dir) / "dataset.jsonl").string(),
                          jsonl);
}

namespace {

[[noreturn]] void record_error(const std::string& where,
                               const std::string& what) {
  throw FormatError(where + ": " + what);
}

const json& need(const json& j, const char* field, const std::string& where) {
  if (!j.contains(field))
    record_error(where, std::string("missing field '") + field + "'");
  return j.at(field);
}

// Shared record parser: `where` labels error messages, `dir` anchors
// relative feature refs.
GroundingSample parse_record(const std::string& text, const std::string& where,
                             const std::string& dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    record_error(where, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) record_error(where, "record is not an object");

  GroundingSample s;
  try {
    s.qid = need(j, "qid", where).get<int64_t>();
    s.vid = need(j, "vid", where).get<std::string>();
    s.duration = need(j, "duration", where).get<double>();
    const json& windows = need(j, "relevant_windows", where);
    if (!windows.is_array() || windows.empty())
      record_error(where, "field 'relevant_windows' must be a nonempty array");
    for (const auto& w : windows) {
      if (!w.is_array() || w.size() != 2)
        record_error(where,
                     "field 'relevant_windows' entries must be [start, end]");
      const double ws = w[0].get<double>();
      const double we = w[1].get<double>();
      if (!(s.duration > 0))
        record_error(where, "field 'duration' must be positive");
      if (ws < 0 || we > s.duration * (1 + 1e-12) || we <= ws)
        throw ValidationError(
            where + ": field 'relevant_windows' maps outside the unit span");
      s.gt_moments.push_back(geom::Span{(ws + we) / 2.0 / s.duration,
                                        (we - ws) / s.duration});
    }
    const std::string vref =
        need(j, "video_feature_ref", where).get<std::string>();
    const std::string sref =
        need(j, "sentence_feature_ref", where).get<std::string>();
    try {
      s.video_features = read_feature_matrix((fs::path(dir) / vref).string());
      s.sentence_features =
          read_feature_matrix((fs::path(dir) / sref).string());
    } catch (const MissingArtifactError& e) {
      throw MissingArtifactError("sample '" + s.vid + "': " + e.what());
    }
    if (j.contains("meta") && j.at("meta").is_object()) {
      const json& m = j.at("meta");
      s.meta.present = true;
      if (m.contains("event_starts"))
        s.meta.event_starts = m.at("event_starts").get<std::vector<int>>();
      if (m.contains("prototype_ids"))
        s.meta.prototype_ids = m.at("prototype_ids").get<std::vector<int>>();
      if (m.contains("target_event"))
        s.meta.target_event = m.at("target_event").get<int>();
    }
  } catch (const json::exception& e) {
    record_error(where, std::string("bad field type: ") + e.what());
  }

  if (s.video_features.rows < 1 || s.sentence_features.rows < 1)
    throw ValidationError(where + ": empty feature sequence for '" + s.vid +
                          "'");
  if (!s.video_features.all_finite() || !s.sentence_features.all_finite())
    throw ValidationError(where + ": non-finite features for '" + s.vid +
                          "'");
  return s;
}

}  // namespace

GroundingSample parse_sample_record(const std::string& json_text,
                                    const std::string& base_dir) {
  return parse_record(json_text, "sample record", base_dir);
}

DatasetReader::DatasetReader(const std::string& jsonl_path)
    : path_(jsonl_path) {
  dir_ = fs::path(jsonl_path).parent_path().string();
  std::istringstream stream(util::read_file(jsonl_path));
  std::string line;
  while (std::getline(stream, line)) lines_.push_back(line);
}

std::optional<GroundingSample> DatasetReader::next() {
  while (line_ < lines_.size() && lines_[line_].empty()) ++line_;
  if (line_ >= lines_.size()) return std::nullopt;
  const size_t lineno = ++line_;  // 1-based for messages
  const std::string where = path_ + " line " + std::to_string(lineno);
  return parse_record(lines_[lineno - 1], where, dir_);
}

std::vector<GroundingSample> load_dataset(const std::string& jsonl_path) {
  DatasetReader reader(jsonl_path);
  std::vector<GroundingSample> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace eatr::data
