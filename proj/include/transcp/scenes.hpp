#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "transcp/bbox.hpp"
#include "transcp/tensor.hpp"

// Synthetic grounding benchmark: deterministic rendered scenes of colored
// shapes on a fixed placement grid, paired with templated referring
// expressions. Samples are regenerated from seeds; only manifests are stored.

namespace transcp::scenes {

// ---- fixed benchmark geometry ----
constexpr int kCanvas = 96;
constexpr int kGrid = 6;             // 6x6 placement grid, 16 px cells
constexpr int kCell = kCanvas / kGrid;
constexpr int kMaxQueryLen = 12;     // including begin/end sentinels
constexpr int kNumBaseCategories = 8;
constexpr int kNumNovelCategories = 4;
constexpr int kNumCategories = kNumBaseCategories + kNumNovelCategories;
constexpr int kNumColors = 6;
constexpr int kNumSizes = 3;
constexpr int kNumRelations = 4;
constexpr double kMaxPairIou = 0.20;

enum class SplitTag { train, val_standard, test_standard, test_openvocab };

const char* split_name(SplitTag t);
std::optional<SplitTag> split_from_name(const std::string& name);

enum Relation { kLeftOf = 0, kRightOf = 1, kAbove = 2, kBelow = 3 };

struct SceneObject {
  int category = 0;
  int color = 0;
  int size_class = 0;
  int row = 0, col = 0;  // placement grid cell
  int cx = 0, cy = 0;    // pixel center
  int bw = 0, bh = 0;    // pixel extent of the shape's bounding box

  int x0() const { return cx - (bw - 1) / 2; }
  int y0() const { return cy - (bh - 1) / 2; }
  BBox box() const {
    return BBox(double(x0()) / kCanvas, double(y0()) / kCanvas,
                double(bw) / kCanvas, double(bh) / kCanvas);
  }
};

struct RelationEdge {
  int subject = 0;
  int relation = 0;
  int object = 0;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  int canvas_size = kCanvas;
  std::vector<RelationEdge> relation_graph;
};

// Structured form of a referring expression; -1 marks an unused slot.
struct QuerySpec {
  int category = -1;
  int color = -1;
  int size_class = -1;
  int relation = -1;
  int rel_category = -1;
  int rel_color = -1;
  int rel_size = -1;

  bool has_relation() const { return relation >= 0; }
  bool has_attribute() const { return color >= 0 || size_class >= 0; }
};

struct VocabularySplit {
  std::vector<int> base_categories;
  std::vector<int> novel_categories;
  std::vector<int> cluster_map;  // category id -> cluster id
};

VocabularySplit default_vocabulary_split();

struct GroundingSample {
  Tensor<float> image;  // {3, kCanvas, kCanvas}, values in [0,1]
  std::vector<int> query_tokens;     // length kMaxQueryLen, padded with 0
  std::vector<uint8_t> query_mask;   // true on real tokens
  BBox gt_box;
  int referent_idx = -1;
  SplitTag split_tag = SplitTag::train;
  std::string query_text;
  uint64_t seed = 0;
};

// Full generation record, used by tests and the heatmap exporter.
struct SceneDetail {
  SceneSpec scene;
  QuerySpec query;
  GroundingSample sample;
};

// ---- vocabulary / tokenizer ----
const std::vector<std::string>& vocab_words();
int vocab_size();
int word_id(const std::string& word);  // -1 if unknown
constexpr int kPadId = 0;
constexpr int kBeginId = 1;
constexpr int kEndId = 2;

const char* category_word(int category);
const char* color_word(int color);
const char* size_word(int size_class);

// Fixed-length tokenization over the closed template vocabulary. Longer
// queries are truncated (end sentinel kept), shorter ones padded.
std::pair<std::vector<int>, std::vector<uint8_t>> tokenize(
    const std::string& text, int max_len = kMaxQueryLen);

std::string query_text(const QuerySpec& q);

// ---- generation ----
GroundingSample generate_scene(uint64_t seed, SplitTag split,
                               const VocabularySplit& vocab);
SceneDetail generate_scene_detail(uint64_t seed, SplitTag split,
                                  const VocabularySplit& vocab);

Tensor<float> render(const SceneSpec& spec);
// Binary occupancy of one object, ignoring occlusion by other objects.
Tensor<uint8_t> render_object_mask(const SceneSpec& spec, int obj_idx);

bool object_matches(const SceneSpec& scene, int obj_idx, const QuerySpec& q);
int count_matches(const SceneSpec& scene, const QuerySpec& q);

// Per-sample seed stream for a dataset: disjoint across splits and indices.
uint64_t sample_seed(uint64_t dataset_seed, SplitTag split, size_t index);

// ---- manifest ----
struct ManifestRecord {
  uint64_t seed = 0;
  SplitTag split = SplitTag::train;
  std::string query;
  BBox gt_box;
};

void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

}  // namespace transcp::scenes
