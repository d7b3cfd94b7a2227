#include "transcp/scenes.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "transcp/rng.hpp"

namespace transcp::scenes {

namespace {

const std::array<const char*, kNumCategories> kCategoryWords = {
    // base
    "square", "circle", "triangle", "diamond", "plus", "star", "ring", "bar",
    // novel
    "hexagon", "cross", "frame", "stripe"};

const std::array<const char*, kNumColors> kColorWords = {
    "red", "green", "blue", "yellow", "magenta", "cyan"};

const std::array<std::array<float, 3>, kNumColors> kColorRgb = {{
    {0.90f, 0.10f, 0.10f},
    {0.10f, 0.80f, 0.15f},
    {0.15f, 0.20f, 0.90f},
    {0.90f, 0.85f, 0.10f},
    {0.85f, 0.15f, 0.80f},
    {0.10f, 0.80f, 0.85f},
}};

constexpr float kBackground = 0.08f;

const std::array<const char*, kNumSizes> kSizeWords = {"small", "medium",
                                                       "large"};
const std::array<int, kNumSizes> kSizePx = {11, 13, 15};

// Relation phrase fragments; "left"/"right" take a trailing "of".
const std::array<const char*, kNumRelations> kRelationHead = {"left", "right",
                                                              "above", "below"};
const std::array<bool, kNumRelations> kRelationTakesOf = {true, true, false,
                                                          false};

std::vector<std::string> build_vocab() {
  std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "the", "of",
                                    "left", "right", "above", "below"};
  for (const char* w : kColorWords) words.push_back(w);
  for (const char* w : kSizeWords) words.push_back(w);
  for (const char* w : kCategoryWords) words.push_back(w);
  return words;
}

const std::vector<std::string>& vocab() {
  static const std::vector<std::string> v = build_vocab();
  return v;
}

const std::unordered_map<std::string, int>& vocab_index() {
  static const std::unordered_map<std::string, int> idx = [] {
    std::unordered_map<std::string, int> m;
    for (size_t i = 0; i < vocab().size(); ++i) m[vocab()[i]] = int(i);
    return m;
  }();
  return idx;
}

// Pixel extents of a shape's bounding box. Bars are elongated; everything
// else is square.
std::pair<int, int> shape_extent(int category, int size_class) {
  int s = kSizePx[size_t(size_class)];
  const std::string name = kCategoryWords[size_t(category)];
  if (name == "bar") return {s, s - 8};
  if (name == "stripe") return {s - 8, s};
  return {s, s};
}

enum ShapeId {
  kSquare = 0, kCircle, kTriangle, kDiamond, kPlus, kStar, kRing, kBar,
  kHexagon, kCross, kFrame, kStripe
};

// Shape predicate over local box coordinates (x in [0,bw), y in [0,bh)).
// Every shape lights at least one pixel on each edge row/column of its box so
// the rendered extent equals the declared extent exactly.
bool shape_hit(int category, int bw, int bh, int x, int y) {
  int cx = (bw - 1) / 2, cy = (bh - 1) / 2;
  int dx = x - cx, dy = y - cy;
  int adx = std::abs(dx), ady = std::abs(dy);
  int t = std::max(1, bw / 6);
  switch (category) {
    case kSquare:
    case kBar:
    case kStripe:
      return true;
    case kCircle:
      return dx * dx + dy * dy <= cx * cx;
    case kTriangle:
      // Apex at the top-center, base along the bottom row.
      return adx * (bh - 1) <= cx * y;
    case kDiamond:
      return adx + ady <= cx;
    case kPlus:
      return adx <= t || ady <= t;
    case kStar:
      return adx <= t || ady <= t || std::abs(adx - ady) <= std::max(0, t - 1);
    case kRing: {
      int router = cx, rinner = cx - std::max(2, bw / 4);
      int d2 = dx * dx + dy * dy;
      return d2 <= router * router && d2 > rinner * rinner;
    }
    case kHexagon:
      return adx <= cx && ady <= cy && adx + std::max(0, ady - cy / 2) <= cx;
    case kCross:
      return std::abs(adx - ady) <= t;
    case kFrame: {
      int ft = std::max(2, bw / 5);
      return x < ft || x >= bw - ft || y < ft || y >= bh - ft;
    }
    default:
      fail("unknown category id ", category);
  }
}

uint64_t hash_vocab(const VocabularySplit& v) {
  uint64_t h = 0x9e3779b97f4a7c15ULL;
  auto fold = [&h](const std::vector<int>& xs, uint64_t tag) {
    h = Rng::derive(h, "fold", tag, xs.size());
    for (int x : xs) h = Rng::derive(h, "elem", uint64_t(x));
  };
  fold(v.base_categories, 1);
  fold(v.novel_categories, 2);
  fold(v.cluster_map, 3);
  return h;
}

void compute_relations(SceneSpec& spec) {
  spec.relation_graph.clear();
  int n = int(spec.objects.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& a = spec.objects[size_t(i)];
      const auto& b = spec.objects[size_t(j)];
      if (a.row == b.row && a.col < b.col)
        spec.relation_graph.push_back({i, kLeftOf, j});
      if (a.row == b.row && a.col > b.col)
        spec.relation_graph.push_back({i, kRightOf, j});
      if (a.col == b.col && a.row < b.row)
        spec.relation_graph.push_back({i, kAbove, j});
      if (a.col == b.col && a.row > b.row)
        spec.relation_graph.push_back({i, kBelow, j});
    }
  }
}

bool attrs_match(const SceneObject& o, int category, int color, int size) {
  if (o.category != category) return false;
  if (color >= 0 && o.color != color) return false;
  if (size >= 0 && o.size_class != size) return false;
  return true;
}

// Places one object centered in its grid cell with a small jitter, bounded so
// the shape stays fully inside the canvas.
void place_object(SceneObject& o, Rng& rng) {
  auto [bw, bh] = shape_extent(o.category, o.size_class);
  o.bw = bw;
  o.bh = bh;
  int half_w = (bw - 1) / 2, half_h = (bh - 1) / 2;
  int cx0 = o.col * kCell + kCell / 2, cy0 = o.row * kCell + kCell / 2;
  int jx_lo = std::max(-2, half_w - cx0);
  int jx_hi = std::min(2, kCanvas - 1 - (cx0 + bw - 1 - half_w));
  int jy_lo = std::max(-2, half_h - cy0);
  int jy_hi = std::min(2, kCanvas - 1 - (cy0 + bh - 1 - half_h));
  o.cx = cx0 + jx_lo + int(rng.randint(uint64_t(jx_hi - jx_lo + 1)));
  o.cy = cy0 + jy_lo + int(rng.randint(uint64_t(jy_hi - jy_lo + 1)));
}

struct TemplateKind {
  enum Kind { category_only, attribute, relation } kind;
};

// Candidate queries for the referent, cheapest description first within each
// template family.
std::vector<QuerySpec> candidates_for(const SceneSpec& scene, int ref,
                                      TemplateKind::Kind kind) {
  const SceneObject& r = scene.objects[size_t(ref)];
  std::vector<QuerySpec> out;
  auto base = [&] {
    QuerySpec q;
    q.category = r.category;
    return q;
  };
  switch (kind) {
    case TemplateKind::category_only:
      out.push_back(base());
      break;
    case TemplateKind::attribute: {
      QuerySpec q = base();
      q.color = r.color;
      out.push_back(q);
      q = base();
      q.size_class = r.size_class;
      out.push_back(q);
      q = base();
      q.color = r.color;
      q.size_class = r.size_class;
      out.push_back(q);
      break;
    }
    case TemplateKind::relation: {
      for (const auto& e : scene.relation_graph) {
        if (e.subject != ref) continue;
        const SceneObject& p = scene.objects[size_t(e.object)];
        QuerySpec q = base();
        q.relation = e.relation;
        q.rel_category = p.category;
        out.push_back(q);
        q.rel_color = p.color;
        out.push_back(q);
        q.color = r.color;
        out.push_back(q);
      }
      break;
    }
  }
  return out;
}

}  // namespace

const char* split_name(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val_standard: return "val-standard";
    case SplitTag::test_standard: return "test-standard";
    case SplitTag::test_openvocab: return "test-openvocab";
  }
  return "?";
}

std::optional<SplitTag> split_from_name(const std::string& name) {
  for (SplitTag t : {SplitTag::train, SplitTag::val_standard,
                     SplitTag::test_standard, SplitTag::test_openvocab})
    if (name == split_name(t)) return t;
  return std::nullopt;
}

VocabularySplit default_vocabulary_split() {
  VocabularySplit v;
  for (int c = 0; c < kNumBaseCategories; ++c) v.base_categories.push_back(c);
  for (int c = kNumBaseCategories; c < kNumCategories; ++c)
    v.novel_categories.push_back(c);
  // Clusters group silhouettes of the same family: solid convex blobs, armed
  // shapes, hollow shapes, elongated shapes. Each novel category shares a
  // cluster with at least one base category.
  v.cluster_map = {0, 0, 0, 0, 1, 1, 2, 3,   // square..bar
                   0, 1, 2, 3};              // hexagon, cross, frame, stripe
  return v;
}

const std::vector<std::string>& vocab_words() { return vocab(); }
int vocab_size() { return int(vocab().size()); }
int word_id(const std::string& word) {
  auto it = vocab_index().find(word);
  return it == vocab_index().end() ? -1 : it->second;
}

const char* category_word(int category) {
  return kCategoryWords.at(size_t(category));
}
const char* color_word(int color) { return kColorWords.at(size_t(color)); }
const char* size_word(int size_class) {
  return kSizeWords.at(size_t(size_class));
}

std::pair<std::vector<int>, std::vector<uint8_t>> tokenize(
    const std::string& text, int max_len) {
  TCP_CHECK(max_len >= 2, "tokenize: max_len must fit the sentinels");
  std::vector<int> ids = {kBeginId};
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    int id = word_id(word);
    TCP_CHECK(id >= 0, "tokenize: unknown word '", word,
              "' (closed vocabulary)");
    ids.push_back(id);
  }
  if (int(ids.size()) > max_len - 1) ids.resize(size_t(max_len - 1));
  ids.push_back(kEndId);
  std::vector<uint8_t> mask(size_t(max_len), 0);
  for (size_t i = 0; i < ids.size(); ++i) mask[i] = 1;
  ids.resize(size_t(max_len), kPadId);
  return {std::move(ids), std::move(mask)};
}

std::string query_text(const QuerySpec& q) {
  std::string s = "the";
  if (q.size_class >= 0) s += std::string(" ") + size_word(q.size_class);
  if (q.color >= 0) s += std::string(" ") + color_word(q.color);
  s += std::string(" ") + category_word(q.category);
  if (q.has_relation()) {
    s += std::string(" ") + kRelationHead[size_t(q.relation)];
    if (kRelationTakesOf[size_t(q.relation)]) s += " of";
    s += " the";
    if (q.rel_size >= 0) s += std::string(" ") + size_word(q.rel_size);
    if (q.rel_color >= 0) s += std::string(" ") + color_word(q.rel_color);
    s += std::string(" ") + category_word(q.rel_category);
  }
  return s;
}

bool object_matches(const SceneSpec& scene, int obj_idx, const QuerySpec& q) {
  const SceneObject& o = scene.objects[size_t(obj_idx)];
  if (!attrs_match(o, q.category, q.color, q.size_class)) return false;
  if (!q.has_relation()) return true;
  for (const auto& e : scene.relation_graph) {
    if (e.subject != obj_idx || e.relation != q.relation) continue;
    const SceneObject& p = scene.objects[size_t(e.object)];
    if (attrs_match(p, q.rel_category, q.rel_color, q.rel_size)) return true;
  }
  return false;
}

int count_matches(const SceneSpec& scene, const QuerySpec& q) {
  int n = 0;
  for (size_t i = 0; i < scene.objects.size(); ++i)
    if (object_matches(scene, int(i), q)) ++n;
  return n;
}

Tensor<float> render(const SceneSpec& spec) {
  const int cs = spec.canvas_size;
  Tensor<float> img({3, size_t(cs), size_t(cs)}, kBackground);
  for (const auto& o : spec.objects) {
    const auto& rgb = kColorRgb[size_t(o.color)];
    for (int y = 0; y < o.bh; ++y) {
      for (int x = 0; x < o.bw; ++x) {
        if (!shape_hit(o.category, o.bw, o.bh, x, y)) continue;
        int px = o.x0() + x, py = o.y0() + y;
        for (int c = 0; c < 3; ++c)
          img.at(size_t(c), size_t(py), size_t(px)) = rgb[size_t(c)];
      }
    }
  }
  return img;
}

Tensor<uint8_t> render_object_mask(const SceneSpec& spec, int obj_idx) {
  const int cs = spec.canvas_size;
  Tensor<uint8_t> m({size_t(cs), size_t(cs)}, 0);
  const auto& o = spec.objects.at(size_t(obj_idx));
  for (int y = 0; y < o.bh; ++y)
    for (int x = 0; x < o.bw; ++x)
      if (shape_hit(o.category, o.bw, o.bh, x, y))
        m.at(size_t(o.y0() + y), size_t(o.x0() + x)) = 1;
  return m;
}

uint64_t sample_seed(uint64_t dataset_seed, SplitTag split, size_t index) {
  return Rng::derive(dataset_seed, "sample", uint64_t(split), index);
}

SceneDetail generate_scene_detail(uint64_t seed, SplitTag split,
                                  const VocabularySplit& vocab_split) {
  TCP_CHECK(!vocab_split.base_categories.empty(),
            "generate_scene: vocabulary split has an empty base set");
  const uint64_t vh = hash_vocab(vocab_split);
  const bool openvocab = split == SplitTag::test_openvocab;

  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(Rng::derive(seed, std::string("scene/") + split_name(split),
                        attempt, vh));
    SceneSpec scene;
    int n_obj = 2 + int(rng.randint(4));

    // Referent category: novel in the open-vocabulary split, base otherwise.
    const auto& ref_pool =
        openvocab ? vocab_split.novel_categories : vocab_split.base_categories;
    int ref_cat = ref_pool[size_t(rng.randint(ref_pool.size()))];

    // Cells: referent first; often force an aligned partner so relation
    // templates are available.
    std::vector<int> cells(size_t(kGrid * kGrid));
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = int(i);
    rng.shuffle(cells);
    int ref_cell = cells[0];
    std::vector<int> chosen = {ref_cell};
    size_t cursor = 1;
    if (n_obj >= 2 && rng.uniform() < 0.8) {
      int rr = ref_cell / kGrid, rc = ref_cell % kGrid;
      std::vector<int> aligned;
      for (int c : cells)
        if (c != ref_cell && (c / kGrid == rr || c % kGrid == rc))
          aligned.push_back(c);
      if (!aligned.empty())
        chosen.push_back(aligned[size_t(rng.randint(aligned.size()))]);
    }
    while (int(chosen.size()) < n_obj && cursor < cells.size()) {
      int c = cells[cursor++];
      if (std::find(chosen.begin(), chosen.end(), c) == chosen.end())
        chosen.push_back(c);
    }
    if (int(chosen.size()) < n_obj) continue;

    // Categories: context objects draw from the base pool; one of them copies
    // the referent's category often enough that same-category distractors are
    // common (always when there are just two objects).
    std::vector<int> cats(static_cast<size_t>(n_obj), 0);
    cats[0] = ref_cat;
    const auto& base = vocab_split.base_categories;
    for (int i = 1; i < n_obj; ++i)
      cats[size_t(i)] = base[size_t(rng.randint(base.size()))];
    bool twin = n_obj == 2 || rng.uniform() < 0.65;
    if (twin && n_obj >= 2) cats[1] = ref_cat;
    if (!twin && n_obj >= 3) cats[2] = cats[1];  // shared pair in the context

    for (int i = 0; i < n_obj; ++i) {
      SceneObject o;
      o.category = cats[size_t(i)];
      o.color = int(rng.randint(kNumColors));
      o.size_class = int(rng.randint(kNumSizes));
      o.row = chosen[size_t(i)] / kGrid;
      o.col = chosen[size_t(i)] % kGrid;
      place_object(o, rng);
      scene.objects.push_back(o);
    }

    // Scene invariants: inside canvas by construction; check pair overlap and
    // the shared-category requirement.
    bool ok = true;
    for (size_t i = 0; i < scene.objects.size() && ok; ++i)
      for (size_t j = i + 1; j < scene.objects.size() && ok; ++j)
        if (iou(scene.objects[i].box(), scene.objects[j].box()) > kMaxPairIou)
          ok = false;
    bool shared = false;
    for (size_t i = 0; i < scene.objects.size(); ++i)
      for (size_t j = i + 1; j < scene.objects.size(); ++j)
        if (scene.objects[i].category == scene.objects[j].category)
          shared = true;
    if (!ok || !shared) continue;

    // Shuffle draw order; track where the referent ends up.
    std::vector<int> order(static_cast<size_t>(n_obj), 0);
    for (int i = 0; i < n_obj; ++i) order[size_t(i)] = i;
    rng.shuffle(order);
    std::vector<SceneObject> shuffled;
    int ref_idx = -1;
    for (int i = 0; i < n_obj; ++i) {
      if (order[size_t(i)] == 0) ref_idx = i;
      shuffled.push_back(scene.objects[size_t(order[size_t(i)])]);
    }
    scene.objects = std::move(shuffled);
    compute_relations(scene);

    // Template preference: relation-first half the time, attribute-first
    // less often, category-only occasionally. Escalate until unique.
    double u = rng.uniform();
    std::vector<TemplateKind::Kind> prefs;
    if (u < 0.55)
      prefs = {TemplateKind::relation, TemplateKind::attribute,
               TemplateKind::category_only};
    else if (u < 0.85)
      prefs = {TemplateKind::attribute, TemplateKind::relation,
               TemplateKind::category_only};
    else
      prefs = {TemplateKind::category_only, TemplateKind::attribute,
               TemplateKind::relation};

    std::optional<QuerySpec> picked;
    for (auto kind : prefs) {
      for (const QuerySpec& q : candidates_for(scene, ref_idx, kind)) {
        if (count_matches(scene, q) == 1 && object_matches(scene, ref_idx, q)) {
          picked = q;
          break;
        }
      }
      if (picked) break;
    }
    if (!picked) continue;

    SceneDetail detail;
    detail.scene = scene;
    detail.query = *picked;
    GroundingSample& s = detail.sample;
    s.image = render(scene);
    s.query_text = query_text(*picked);
    auto [ids, mask] = tokenize(s.query_text);
    s.query_tokens = std::move(ids);
    s.query_mask = std::move(mask);
    s.gt_box = scene.objects[size_t(ref_idx)].box();
    s.referent_idx = ref_idx;
    s.split_tag = split;
    s.seed = seed;
    return detail;
  }
  fail("generate_scene: no valid scene after 64 attempts (seed ", seed, ")");
}

GroundingSample generate_scene(uint64_t seed, SplitTag split,
                               const VocabularySplit& vocab_split) {
  return generate_scene_detail(seed, split, vocab_split).sample;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  TCP_CHECK(os.good(), "cannot open manifest for writing: ", path);
  for (const auto& r : records) {
    nlohmann::json j = {{"seed", r.seed},
                        {"split", split_name(r.split)},
                        {"query", r.query},
                        {"gt_box", {r.gt_box.x, r.gt_box.y, r.gt_box.w,
                                    r.gt_box.h}}};
    os << j.dump() << "\n";
  }
  TCP_CHECK(os.good(), "failed writing manifest: ", path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  TCP_CHECK(is.good(), "cannot open manifest: ", path);
  std::vector<ManifestRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    TCP_CHECK(!j.is_discarded(), path, ":", line_no, ": invalid record");
    ManifestRecord r;
    r.seed = j.at("seed").get<uint64_t>();
    auto split = split_from_name(j.at("split").get<std::string>());
    TCP_CHECK(split.has_value(), path, ":", line_no, ": unknown split tag");
    r.split = *split;
    r.query = j.at("query").get<std::string>();
    auto b = j.at("gt_box");
    r.gt_box = BBox(b.at(0).get<double>(), b.at(1).get<double>(),
                    b.at(2).get<double>(), b.at(3).get<double>());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace transcp::scenes
