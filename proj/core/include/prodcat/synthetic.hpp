#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "prodcat/catalog.hpp"

namespace prodcat {

enum class AttrSignal { none, weak, strong };
enum class CorpusKind {
  standard,     ///< class vocabularies in titles, optional identifying attributes
  confusable,   ///< cross-category leaf pairs with the same words in reverse order
  separator,    ///< leaf pairs whose attribute strings differ only in where names end
};

AttrSignal parse_attr_signal(std::string_view text);
CorpusKind parse_corpus_kind(std::string_view text);
std::string_view to_string(AttrSignal signal);
std::string_view to_string(CorpusKind kind);

struct SyntheticSpec {
  std::size_t classes = 50;
  std::size_t per_class = 200;
  /// Probability that a title or description token comes from the pool shared
  /// by all classes instead of the class's own vocabulary.
  double overlap = 0.3;
  AttrSignal attr_signal = AttrSignal::strong;
  CorpusKind kind = CorpusKind::standard;
  std::uint64_t seed = 0;

  void validate() const;
};

/// How a class can be told apart.
enum class ClassSignal {
  title,      ///< only through title and description words
  presence,   ///< carries an attribute no other class has
  value,      ///< a shared attribute takes a class-specific value
  order,      ///< same words as its partner class, different order
  separator,  ///< same attribute tokens as its partner, different name/value split
};

std::string_view to_string(ClassSignal signal);

struct SyntheticClass {
  std::string label;
  std::string category;
  ClassSignal signal = ClassSignal::title;
  std::string attribute;  ///< identifying attribute name, if any
  std::string value;      ///< identifying value, if any
  std::string partner;    ///< paired class for order/separator corpora
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  Taxonomy taxonomy;
  std::vector<SyntheticClass> classes;
  std::vector<LabeledExample> examples;

  /// Labels of classes whose structured attributes identify them.
  std::vector<std::string> identifying_labels() const;
  std::string truth_json() const;
  /// Writes taxonomy.txt, corpus.jsonl and truth.json.
  void write(const std::filesystem::path& dir) const;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace prodcat
