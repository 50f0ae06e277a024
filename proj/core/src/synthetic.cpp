#include "prodcat/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "prodcat/error.hpp"

namespace prodcat {

namespace {

constexpr std::size_t kTitleLength = 6;
constexpr std::size_t kDescriptionLength = 12;
constexpr std::size_t kClassVocabulary = 10;
constexpr std::size_t kSharedPool = 100;
constexpr std::size_t kNeutralStyles = 15;
constexpr std::size_t kBrands = 40;
constexpr double kIdentifyingShare = 0.6;

const std::vector<std::string> kColors{"red",   "blue",  "green", "black", "white", "navy",
                                       "beige", "grey",  "pink",  "brown", "olive", "teal"};

class Words {
 public:
  explicit Words(std::mt19937_64& rng) : rng_(rng) {}

  std::string next() {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1), v(0, vowels.size() - 1), len(2, 3);
    while (true) {
      std::string w;
      for (std::size_t i = len(rng_); i > 0; --i) {
        w += consonants[c(rng_)];
        w += vowels[v(rng_)];
      }
      if (used_.insert(w).second) {
        return w;
      }
    }
  }

  std::vector<std::string> next(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(next());
    }
    return out;
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string text_from(const std::vector<std::string>& own, const std::vector<std::string>& shared, double overlap,
                      std::size_t length, std::mt19937_64& rng) {
  std::bernoulli_distribution from_shared(overlap);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < length; ++i) {
    words.push_back(from_shared(rng) ? pick(shared, rng) : pick(own, rng));
  }
  return join(words);
}

std::string class_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Type %03zu", i);
  return buf;
}

std::string category_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Category %02zu", i);
  return buf;
}

std::string product_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%07zu", i);
  return buf;
}

std::pair<std::string, std::string> weight_attribute(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> whole(0, 9), tenth(0, 9);
  return {"assembled_product_weight", std::to_string(whole(rng)) + "." + std::to_string(tenth(rng)) + " pounds"};
}

Taxonomy two_level(const std::vector<SyntheticClass>& classes) {
  std::vector<std::vector<std::string>> paths;
  for (const auto& c : classes) {
    paths.push_back({c.category, c.label});
  }
  return Taxonomy::from_paths(paths);
}

SyntheticCorpus standard(const SyntheticSpec& spec, std::mt19937_64& rng) {
  Words words(rng);
  const auto shared = words.next(kSharedPool);
  const auto brands = words.next(kBrands);
  const auto neutral = words.next(kNeutralStyles);

  SyntheticCorpus corpus;
  corpus.spec = spec;
  const std::size_t categories = std::max<std::size_t>(2, (spec.classes + 9) / 10);
  std::vector<std::vector<std::string>> vocab;
  for (std::size_t i = 0; i < spec.classes; ++i) {
    SyntheticClass c;
    c.label = class_label(i);
    c.category = category_label(i % categories);
    corpus.classes.push_back(c);
    vocab.push_back(words.next(kClassVocabulary));
  }

  std::vector<std::string> valued;  // style values owned by value classes
  if (spec.attr_signal != AttrSignal::none) {
    std::vector<std::size_t> order(spec.classes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto identifying = static_cast<std::size_t>(kIdentifyingShare * static_cast<double>(spec.classes) + 0.5);
    const std::size_t presence = (identifying + 1) / 2;
    for (std::size_t j = 0; j < identifying; ++j) {
      auto& c = corpus.classes[order[j]];
      if (j < presence) {
        c.signal = ClassSignal::presence;
        c.attribute = words.next() + "_" + words.next() + "_type";
        c.value = "yes";
      } else {
        c.signal = ClassSignal::value;
        c.attribute = "style";
        c.value = words.next();
        valued.push_back(c.value);
      }
    }
  }
  std::vector<std::string> finishes = neutral;
  finishes.insert(finishes.end(), valued.begin(), valued.end());

  const double carry = spec.attr_signal == AttrSignal::weak ? 0.5 : 1.0;
  std::bernoulli_distribution carries(carry);
  std::size_t next_id = 0;
  for (std::size_t i = 0; i < spec.classes; ++i) {
    const auto& c = corpus.classes[i];
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      LabeledExample ex;
      ex.label = c.label;
      ex.product.id = product_id(next_id++);
      ex.product.unstructured["product_name"] = text_from(vocab[i], shared, spec.overlap, kTitleLength, rng);
      ex.product.unstructured["product_short_description"] =
          text_from(vocab[i], shared, spec.overlap, kDescriptionLength, rng);

      auto& attrs = ex.product.structured;
      attrs.push_back(weight_attribute(rng));
      attrs.emplace_back("color", pick(kColors, rng));
      attrs.emplace_back("brand", pick(brands, rng));
      const bool signal = c.signal != ClassSignal::title && carries(rng);
      if (c.signal == ClassSignal::value && signal) {
        attrs.emplace_back("style", c.value);
      } else {
        attrs.emplace_back("style", pick(neutral, rng));
      }
      attrs.emplace_back("finish", pick(finishes, rng));
      if (c.signal == ClassSignal::presence && signal) {
        attrs.emplace_back(c.attribute, c.value);
      }
      std::shuffle(attrs.begin(), attrs.end(), rng);
      corpus.examples.push_back(std::move(ex));
    }
  }
  corpus.taxonomy = two_level(corpus.classes);
  return corpus;
}

/// Leaves in two categories, paired across them. Partners use the same
/// pair-specific words; one class writes them forward, the other reversed.
SyntheticCorpus confusable(const SyntheticSpec& spec, std::mt19937_64& rng) {
  Words words(rng);
  const auto shared = words.next(kSharedPool);
  const auto brands = words.next(kBrands);
  SyntheticCorpus corpus;
  corpus.spec = spec;
  const std::size_t pairs = spec.classes / 2;
  std::vector<std::vector<std::string>> phrase(spec.classes);
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto w = words.next(4);
    SyntheticClass a, b;
    a.label = class_label(2 * p);
    b.label = class_label(2 * p + 1);
    a.category = category_label(0);
    b.category = category_label(1);
    a.signal = b.signal = ClassSignal::order;
    a.partner = b.label;
    b.partner = a.label;
    corpus.classes.push_back(a);
    corpus.classes.push_back(b);
    phrase[2 * p] = w;
    phrase[2 * p + 1] = {w.rbegin(), w.rend()};
  }

  std::uniform_int_distribution<std::size_t> filler(0, 2);
  std::size_t next_id = 0;
  for (std::size_t i = 0; i < corpus.classes.size(); ++i) {
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      auto title = [&] {
        std::vector<std::string> t;
        for (std::size_t k = filler(rng); k > 0; --k) t.push_back(pick(shared, rng));
        t.insert(t.end(), phrase[i].begin(), phrase[i].end());
        for (std::size_t k = filler(rng); k > 0; --k) t.push_back(pick(shared, rng));
        return join(t);
      };
      LabeledExample ex;
      ex.label = corpus.classes[i].label;
      ex.product.id = product_id(next_id++);
      ex.product.unstructured["product_name"] = title();
      ex.product.unstructured["product_short_description"] = title();
      ex.product.structured.emplace_back("color", pick(kColors, rng));
      ex.product.structured.emplace_back("brand", pick(brands, rng));
      corpus.examples.push_back(std::move(ex));
    }
  }
  corpus.taxonomy = two_level(corpus.classes);
  return corpus;
}

/// Partners X and Y carry (a, "b c"), (d, e) and (a, b), ("c d", e): the same
/// token string once the separators are dropped. Titles name the pair only.
SyntheticCorpus separator(const SyntheticSpec& spec, std::mt19937_64& rng) {
  Words words(rng);
  const auto shared = words.next(kSharedPool);
  SyntheticCorpus corpus;
  corpus.spec = spec;
  const std::size_t pairs = spec.classes / 2;
  const std::size_t categories = std::max<std::size_t>(2, (spec.classes + 9) / 10);
  std::vector<std::vector<std::pair<std::string, std::string>>> attrs(spec.classes);
  std::vector<std::vector<std::string>> vocab(spec.classes);
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto w = words.next(5);  // a b c d e
    const auto titles = words.next(kClassVocabulary);
    SyntheticClass x, y;
    x.label = class_label(2 * p);
    y.label = class_label(2 * p + 1);
    x.category = y.category = category_label(p % categories);
    x.signal = y.signal = ClassSignal::separator;
    x.partner = y.label;
    y.partner = x.label;
    x.attribute = w[3];
    x.value = w[1] + " " + w[2];
    y.attribute = w[2] + "_" + w[3];
    y.value = w[1];
    attrs[2 * p] = {{w[0], w[1] + " " + w[2]}, {w[3], w[4]}};
    attrs[2 * p + 1] = {{w[0], w[1]}, {w[2] + "_" + w[3], w[4]}};
    vocab[2 * p] = vocab[2 * p + 1] = titles;
    corpus.classes.push_back(x);
    corpus.classes.push_back(y);
  }

  std::size_t next_id = 0;
  for (std::size_t i = 0; i < corpus.classes.size(); ++i) {
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      LabeledExample ex;
      ex.label = corpus.classes[i].label;
      ex.product.id = product_id(next_id++);
      ex.product.unstructured["product_name"] = text_from(vocab[i], shared, spec.overlap, kTitleLength, rng);
      ex.product.unstructured["product_short_description"] =
          text_from(vocab[i], shared, spec.overlap, kDescriptionLength, rng);
      ex.product.structured = attrs[i];
      ex.product.structured.emplace_back("color", pick(kColors, rng));
      corpus.examples.push_back(std::move(ex));
    }
  }
  corpus.taxonomy = two_level(corpus.classes);
  return corpus;
}

}  // namespace

AttrSignal parse_attr_signal(std::string_view text) {
  if (text == "none") return AttrSignal::none;
  if (text == "weak") return AttrSignal::weak;
  if (text == "strong") return AttrSignal::strong;
  throw ConfigError("unknown attribute signal '" + std::string(text) + "' (expected none, weak or strong)");
}

CorpusKind parse_corpus_kind(std::string_view text) {
  if (text == "standard") return CorpusKind::standard;
  if (text == "confusable") return CorpusKind::confusable;
  if (text == "separator") return CorpusKind::separator;
  throw ConfigError("unknown corpus kind '" + std::string(text) + "' (expected standard, confusable or separator)");
}

std::string_view to_string(AttrSignal signal) {
  switch (signal) {
    case AttrSignal::none: return "none";
    case AttrSignal::weak: return "weak";
    case AttrSignal::strong: return "strong";
  }
  return "?";
}

std::string_view to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::standard: return "standard";
    case CorpusKind::confusable: return "confusable";
    case CorpusKind::separator: return "separator";
  }
  return "?";
}

std::string_view to_string(ClassSignal signal) {
  switch (signal) {
    case ClassSignal::title: return "title";
    case ClassSignal::presence: return "presence";
    case ClassSignal::value: return "value";
    case ClassSignal::order: return "order";
    case ClassSignal::separator: return "separator";
  }
  return "?";
}

void SyntheticSpec::validate() const {
  if (classes < 2 || per_class < 1) {
    throw ConfigError("synthetic corpus needs classes >= 2 and per_class >= 1");
  }
  if (!(overlap >= 0.0 && overlap <= 1.0)) {
    throw ConfigError("overlap must be in [0, 1]");
  }
  if (kind != CorpusKind::standard && classes % 2 != 0) {
    throw ConfigError(std::string(to_string(kind)) + " corpora pair classes; classes must be even");
  }
}

std::vector<std::string> SyntheticCorpus::identifying_labels() const {
  std::vector<std::string> out;
  for (const auto& c : classes) {
    if (c.signal == ClassSignal::presence || c.signal == ClassSignal::value) {
      out.push_back(c.label);
    }
  }
  return out;
}

std::string SyntheticCorpus::truth_json() const {
  nlohmann::ordered_json doc;
  doc["kind"] = std::string(to_string(spec.kind));
  doc["classes"] = spec.classes;
  doc["per_class"] = spec.per_class;
  doc["overlap"] = spec.overlap;
  doc["attr_signal"] = std::string(to_string(spec.attr_signal));
  doc["seed"] = spec.seed;
  auto& list = doc["class_signals"] = nlohmann::ordered_json::array();
  for (const auto& c : classes) {
    nlohmann::ordered_json entry{{"label", c.label}, {"category", c.category}, {"signal", to_string(c.signal)}};
    if (!c.attribute.empty()) entry["attribute"] = c.attribute;
    if (!c.value.empty()) entry["value"] = c.value;
    if (!c.partner.empty()) entry["partner"] = c.partner;
    list.push_back(entry);
  }
  return doc.dump(2);
}

void SyntheticCorpus::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  taxonomy.save(dir / "taxonomy.txt");
  write_corpus(dir / "corpus.jsonl", examples);
  std::ofstream out(dir / "truth.json");
  out << truth_json() << '\n';
  if (!out) {
    throw IoError("cannot write " + (dir / "truth.json").string());
  }
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case CorpusKind::confusable: return confusable(spec, rng);
    case CorpusKind::separator: return separator(spec, rng);
    case CorpusKind::standard: break;
  }
  return standard(spec, rng);
}

}  // namespace prodcat
