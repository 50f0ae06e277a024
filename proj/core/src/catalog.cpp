#include "prodcat/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include "prodcat/error.hpp"

namespace prodcat {

namespace {

using json = nlohmann::json;

constexpr std::string_view kPathSeparator = " > ";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_path(std::string_view line) {
  std::vector<std::string> segments;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(kPathSeparator, start);
    const auto piece = trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    segments.emplace_back(piece);
    if (pos == std::string_view::npos) {
      break;
    }
    start = pos + kPathSeparator.size();
  }
  return segments;
}

}  // namespace

// ---------------------------------------------------------------------------
// Taxonomy

Taxonomy::Taxonomy() { nodes_.push_back(Node{"root", kRoot, {}, 0}); }

Taxonomy::NodeId Taxonomy::add_child(NodeId parent, std::string name) {
  for (NodeId child : nodes_[parent].children) {
    if (nodes_[child].name == name) {
      return child;
    }
  }
  const NodeId id = nodes_.size();
  nodes_.push_back(Node{std::move(name), parent, {}, nodes_[parent].depth + 1});
  nodes_[parent].children.push_back(id);
  return id;
}

Taxonomy Taxonomy::from_paths(const std::vector<std::vector<std::string>>& paths) {
  Taxonomy tax;
  std::vector<NodeId> declared;
  for (const auto& path : paths) {
    if (path.empty()) {
      throw std::invalid_argument("taxonomy: empty path");
    }
    NodeId at = kRoot;
    for (const auto& segment : path) {
      if (segment.empty()) {
        throw std::invalid_argument("taxonomy: empty segment in path");
      }
      at = tax.add_child(at, segment);
    }
    declared.push_back(at);
  }
  for (NodeId id : declared) {
    if (!tax.is_leaf(id)) {
      throw std::invalid_argument("taxonomy: '" + tax.path_string(id) + "' is declared as a leaf but has children");
    }
    if (std::find(tax.leaves_.begin(), tax.leaves_.end(), id) != tax.leaves_.end()) {
      continue;
    }
    const auto& name = tax.nodes_[id].name;
    if (tax.leaf_by_name_.contains(name)) {
      throw std::invalid_argument("taxonomy: duplicate leaf label '" + name + "'");
    }
    tax.leaf_by_name_.emplace(name, id);
    tax.leaves_.push_back(id);
  }
  return tax;
}

Taxonomy Taxonomy::parse(std::string_view text) {
  std::vector<std::vector<std::string>> paths;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') {
      continue;
    }
    paths.push_back(split_path(body));
  }
  return from_paths(paths);
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read taxonomy file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Taxonomy::to_text() const {
  std::string out;
  for (NodeId leaf : leaves_) {
    out += path_string(leaf);
    out += '\n';
  }
  return out;
}

void Taxonomy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write taxonomy file " + path.string());
  }
  out << to_text();
}

std::vector<std::string> Taxonomy::leaf_labels() const {
  std::vector<std::string> labels;
  labels.reserve(leaves_.size());
  for (NodeId id : leaves_) {
    labels.push_back(nodes_[id].name);
  }
  return labels;
}

std::optional<Taxonomy::NodeId> Taxonomy::find_leaf(std::string_view label) const {
  const auto it = leaf_by_name_.find(label);
  if (it == leaf_by_name_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::optional<std::size_t> Taxonomy::leaf_index(std::string_view label) const {
  const auto id = find_leaf(label);
  if (!id) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(std::find(leaves_.begin(), leaves_.end(), *id) - leaves_.begin());
}

std::optional<Taxonomy::NodeId> Taxonomy::find_node(std::string_view name) const {
  for (NodeId id = 1; id < nodes_.size(); ++id) {
    if (nodes_[id].name == name) {
      return id;
    }
  }
  return std::nullopt;
}

std::vector<Taxonomy::NodeId> Taxonomy::path_to(NodeId id) const {
  std::vector<NodeId> path;
  for (NodeId at = id; at != kRoot; at = nodes_.at(at).parent) {
    path.push_back(at);
  }
  path.push_back(kRoot);
  std::reverse(path.begin(), path.end());
  return path;
}

std::string Taxonomy::path_string(NodeId id) const {
  std::string out;
  const auto path = path_to(id);
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (i > 1) {
      out += kPathSeparator;
    }
    out += nodes_[path[i]].name;
  }
  return out;
}

std::size_t Taxonomy::max_depth() const {
  std::size_t depth = 0;
  for (const auto& n : nodes_) {
    depth = std::max(depth, n.depth);
  }
  return depth;
}

// ---------------------------------------------------------------------------
// Records

LabeledExample parse_record(std::string_view line, bool require_label) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw std::invalid_argument("record is not an object");
  }
  LabeledExample ex;
  const auto id = doc.find("id");
  if (id == doc.end() || !id->is_string() || id->get_ref<const std::string&>().empty()) {
    throw std::invalid_argument("field 'id' must be a non-empty string");
  }
  ex.product.id = id->get<std::string>();

  const auto label = doc.find("label");
  if (label != doc.end() || require_label) {
    if (label == doc.end() || !label->is_string() || label->get_ref<const std::string&>().empty()) {
      throw std::invalid_argument("field 'label' must be a non-empty string");
    }
    ex.label = label->get<std::string>();
  }

  if (const auto u = doc.find("unstructured"); u != doc.end()) {
    if (!u->is_object()) {
      throw std::invalid_argument("field 'unstructured' must be an object of strings");
    }
    for (const auto& [name, text] : u->items()) {
      if (name.empty() || !text.is_string()) {
        throw std::invalid_argument("field 'unstructured." + name + "' must be a string with a non-empty name");
      }
      ex.product.unstructured.emplace(name, text.get<std::string>());
    }
  }
  if (const auto s = doc.find("structured"); s != doc.end()) {
    if (!s->is_array()) {
      throw std::invalid_argument("field 'structured' must be a list of [name, value] pairs");
    }
    std::size_t i = 0;
    for (const auto& pair : *s) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string() ||
          pair[0].get_ref<const std::string&>().empty()) {
        throw std::invalid_argument("field 'structured[" + std::to_string(i) + "]' must be a [name, value] string pair");
      }
      ex.product.structured.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
      ++i;
    }
  }
  return ex;
}

std::string format_record(const LabeledExample& example) {
  json doc;
  doc["id"] = example.product.id;
  doc["label"] = example.label;
  doc["unstructured"] = json::object();
  for (const auto& [name, text] : example.product.unstructured) {
    doc["unstructured"][name] = text;
  }
  doc["structured"] = json::array();
  for (const auto& [name, value] : example.product.structured) {
    doc["structured"].push_back(json::array({name, value}));
  }
  return doc.dump();
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write corpus file " + path.string());
  }
  for (const auto& ex : examples) {
    out << format_record(ex) << '\n';
  }
}

IngestResult ingest_text(std::string_view text, const Taxonomy& taxonomy) {
  IngestResult result;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    const auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) {
      continue;
    }
    LabeledExample ex;
    try {
      ex = parse_record(line);
    } catch (const std::invalid_argument& e) {
      result.errors.push_back({line_no, e.what()});
      continue;
    }
    if (!taxonomy.find_leaf(ex.label)) {
      const bool internal = taxonomy.find_node(ex.label).has_value();
      result.errors.push_back({line_no, "label '" + ex.label + "' " +
                                            (internal ? "is not a leaf of the taxonomy" : "is not in the taxonomy")});
      continue;
    }
    if (!seen.insert(ex.product.id).second) {
      result.errors.push_back({line_no, "duplicate id '" + ex.product.id + "'"});
      continue;
    }
    result.examples.push_back(std::move(ex));
  }
  return result;
}

IngestResult ingest(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read corpus file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) {
    throw IoError("error while reading corpus file " + path.string());
  }
  return ingest_text(buffer.str(), taxonomy);
}

// ---------------------------------------------------------------------------
// Stratification and splitting

std::vector<LabeledExample> stratify(std::span<const LabeledExample> examples, std::size_t floor) {
  if (floor < 1) {
    throw std::invalid_argument("stratify: floor must be >= 1");
  }
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = members.try_emplace(examples[i].label);
    if (inserted) {
      order.push_back(examples[i].label);
    }
    it->second.push_back(i);
  }
  std::vector<LabeledExample> out(examples.begin(), examples.end());
  for (const auto& label : order) {
    const auto& idx = members[label];
    for (std::size_t r = idx.size(); r < floor; ++r) {
      out.push_back(examples[idx[r % idx.size()]]);
    }
  }
  return out;
}

std::array<std::size_t, 3> apportion(std::size_t n, SplitFractions fractions) {
  const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * f[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) {
    ++counts[rank[r % 3]];
  }
  return counts;
}

DatasetSplit split(std::span<const LabeledExample> examples, SplitFractions fractions, std::uint64_t seed) {
  const double sum = fractions.train + fractions.validation + fractions.test;
  if (!(fractions.train > 0 && fractions.validation > 0 && fractions.test > 0) || std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must be positive and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    by_class[examples[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  DatasetSplit out;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto counts = apportion(idx.size(), fractions);
    std::size_t at = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) out.train.push_back(examples[idx[at++]]);
    for (std::size_t i = 0; i < counts[1]; ++i) out.validation.push_back(examples[idx[at++]]);
    for (std::size_t i = 0; i < counts[2]; ++i) out.test.push_back(examples[idx[at++]]);
  }
  return out;
}

}  // namespace prodcat
