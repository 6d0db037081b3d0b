#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eatr/geometry.hpp"
#include "eatr/mat.hpp"

namespace eatr::data {

// Planted-event bookkeeping; only synthetic samples carry it.
struct PlantedMeta {
  bool present = false;
  std::vector<int> event_starts;  // first frame of each block
  std::vector<int> prototype_ids;
  int target_event = -1;
};

struct GroundingSample {
  int64_t qid = 0;
  std::string vid;
  double duration = 0.0;  // seconds
  Mat<float> video_features;
  Mat<float> sentence_features;
  std::vector<geom::Span> gt_moments;  // normalized (center, width)
  PlantedMeta meta;
};

// Binary feature matrix: "EATF" magic, u32 LE rows, u32 LE cols, then
// rows*cols f32 LE values row-major. Bit-exact round trip.
Mat<float> read_feature_matrix(const std::string& path);
void write_feature_matrix(const std::string& path, const Mat<float>& m);

// Same encoding in memory; decode consumes one matrix at `offset` and
// advances it, so blobs can be concatenated inside container files.
std::string encode_feature_matrix(const Mat<float>& m);
Mat<float> decode_feature_matrix(const std::string& buf, size_t& offset);

struct GenConfig {
  int num_samples = 128;
  int l_v = 40;   // frames per video
  int l_s = 6;    // sentence tokens
  int d_in = 64;  // feature width for both streams
  int min_events = 2;
  int max_events = 4;
  double noise_sigma = 0.05;
  uint64_t seed = 0;

  void validate() const;  // event range within [2, l_v/4] etc.
};

// Writes <out_dir>/dataset.jsonl plus <out_dir>/features/*.eatf. Each video
// is a sequence of contiguous blocks (>= 3 frames) around unit-norm
// prototypes with Gaussian noise; the sentence carries the target block's
// prototype. Fully determined by cfg.seed.
void generate_synthetic(const GenConfig& cfg, const std::string& out_dir);

// Streams records from a JSON Lines dataset, resolving feature refs
// relative to the dataset file. Validates every record.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& jsonl_path);
  std::optional<GroundingSample> next();  // nullopt at end of file
  size_t line() const { return line_; }

 private:
  std::string dir_;
  std::string path_;
  std::vector<std::string> lines_;
  size_t line_ = 0;
};

std::vector<GroundingSample> load_dataset(const std::string& jsonl_path);

// Parses one standalone record (same schema as a dataset line); feature
// refs resolve relative to base_dir.
GroundingSample parse_sample_record(const std::string& json_text,
                                    const std::string& base_dir);

}  // namespace eatr::data
