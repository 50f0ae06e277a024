#include "prodcat/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "prodcat/checkpoint.hpp"
#include "prodcat/error.hpp"

namespace prodcat {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(sep, start);
    const auto piece = trim(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (!piece.empty()) {
      out.push_back(piece);
    }
    if (end == std::string_view::npos) {
      break;
    }
    start = end + 1;
  }
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) {
      return out;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& piece : split_list(v, ',')) {
    out.push_back(to_count(key, piece));
  }
  return out;
}

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i]);
  }
  return out;
}

std::string real_text(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::multicnn ? "multicnn" : "hierarchical";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "multicnn") return ModelKind::multicnn;
  if (text == "hierarchical") return ModelKind::hierarchical;
  throw ConfigError("unknown model '" + std::string(text) + "' (expected multicnn or hierarchical)");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter, std::less<>> setters{
      {"model", [&](auto&, auto& v) { cfg.kind = parse_model_kind(v); }},
      {"channels",
       [&](auto& k, auto& v) {
         cfg.model.channels.clear();
         for (const auto& entry : split_list(v, ',')) {
           const auto parts = split_list(entry, ':');
           if (parts.size() != 3) {
             throw ConfigError("config key 'channels': entry '" + entry + "' is not attribute:max_len:dict_size");
           }
           cfg.model.channels.push_back({parts[0], to_count(k, parts[1]), to_count(k, parts[2])});
         }
       }},
      {"structured_mode", [&](auto&, auto& v) { cfg.model.structured_mode = parse_structured_mode(v); }},
      {"separator", [&](auto& k, auto& v) { cfg.model.use_separator = to_bool(k, v); }},
      {"structured_max_len", [&](auto& k, auto& v) { cfg.model.structured_max_len = to_count(k, v); }},
      {"structured_dict_size", [&](auto& k, auto& v) { cfg.model.structured_dict_size = to_count(k, v); }},
      {"embed_dim",
       [&](auto& k, auto& v) {
         cfg.model.embed_dim = to_count(k, v);
         cfg.model.conv.embed_dim = cfg.model.embed_dim;
       }},
      {"embed_init", [&](auto& k, auto& v) { cfg.model.embed_init = to_real(k, v); }},
      {"conv_widths", [&](auto& k, auto& v) { cfg.model.conv.widths = to_counts(k, v); }},
      {"filters_per_width", [&](auto& k, auto& v) { cfg.model.conv.filters_per_width = to_count(k, v); }},
      {"fc_sizes", [&](auto& k, auto& v) { cfg.model.fc_sizes = to_counts(k, v); }},
      {"dropout", [&](auto& k, auto& v) { cfg.model.dropout = to_real(k, v); }},
      {"base_lr", [&](auto& k, auto& v) { cfg.train.base_lr = to_real(k, v); }},
      {"min_lr", [&](auto& k, auto& v) { cfg.train.min_lr = to_real(k, v); }},
      {"momentum", [&](auto& k, auto& v) { cfg.train.momentum = to_real(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.train.batch_size = to_count(k, v); }},
      {"epochs", [&](auto& k, auto& v) { cfg.train.epochs = to_count(k, v); }},
      {"stratify_floor", [&](auto& k, auto& v) { cfg.train.stratify_floor = to_count(k, v); }},
      {"split",
       [&](auto& k, auto& v) {
         const auto parts = split_list(v, ',');
         if (parts.size() != 3) {
           throw ConfigError("config key 'split': expected three fractions");
         }
         cfg.train.split = {to_real(k, parts[0]), to_real(k, parts[1]), to_real(k, parts[2])};
       }},
      {"hash_dim", [&](auto& k, auto& v) { cfg.hierarchical.hash_dim = to_count(k, v); }},
      {"l2", [&](auto& k, auto& v) { cfg.hierarchical.l2 = to_real(k, v); }},
      {"hier_epochs", [&](auto& k, auto& v) { cfg.hierarchical.epochs = to_count(k, v); }},
      {"hier_lr", [&](auto& k, auto& v) { cfg.hierarchical.learning_rate = to_real(k, v); }},
      {"hier_threads", [&](auto& k, auto& v) { cfg.hierarchical.threads = to_count(k, v); }},
      {"beam", [&](auto& k, auto& v) { cfg.beam = to_count(k, v); }},
      {"poll_interval", [&](auto& k, auto& v) { cfg.serve.poll_interval = Seconds(to_real(k, v)); }},
      {"max_batch", [&](auto& k, auto& v) { cfg.serve.max_batch = to_count(k, v); }},
      {"queue_capacity", [&](auto& k, auto& v) { cfg.serve.queue_capacity = to_count(k, v); }},
      {"request_timeout", [&](auto& k, auto& v) { cfg.serve.request_timeout = Seconds(to_real(k, v)); }},
      {"k", [&](auto& k, auto& v) { cfg.serve.k = to_count(k, v); }},
      {"bind", [&](auto&, auto& v) { cfg.bind = v; }},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const auto body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
    }
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "model = " << to_string(kind) << '\n';
  out << "channels = ";
  for (std::size_t i = 0; i < model.channels.size(); ++i) {
    const auto& c = model.channels[i];
    out << (i ? "," : "") << c.attribute << ':' << c.max_len << ':' << c.dict_size;
  }
  out << '\n';
  out << "structured_mode = " << to_string(model.structured_mode) << '\n';
  out << "separator = " << (model.use_separator ? "true" : "false") << '\n';
  out << "structured_max_len = " << model.structured_max_len << '\n';
  out << "structured_dict_size = " << model.structured_dict_size << '\n';
  out << "embed_dim = " << model.embed_dim << '\n';
  out << "embed_init = " << real_text(model.embed_init) << '\n';
  out << "conv_widths = " << join_counts(model.conv.widths) << '\n';
  out << "filters_per_width = " << model.conv.filters_per_width << '\n';
  out << "fc_sizes = " << join_counts(model.fc_sizes) << '\n';
  out << "dropout = " << real_text(model.dropout) << '\n';
  out << "base_lr = " << real_text(train.base_lr) << '\n';
  out << "min_lr = " << real_text(train.min_lr) << '\n';
  out << "momentum = " << real_text(train.momentum) << '\n';
  out << "batch_size = " << train.batch_size << '\n';
  out << "epochs = " << train.epochs << '\n';
  out << "stratify_floor = " << train.stratify_floor << '\n';
  out << "split = " << real_text(train.split.train) << ',' << real_text(train.split.validation) << ','
      << real_text(train.split.test) << '\n';
  out << "hash_dim = " << hierarchical.hash_dim << '\n';
  out << "l2 = " << real_text(hierarchical.l2) << '\n';
  out << "hier_epochs = " << hierarchical.epochs << '\n';
  out << "hier_lr = " << real_text(hierarchical.learning_rate) << '\n';
  out << "hier_threads = " << hierarchical.threads << '\n';
  out << "beam = " << beam << '\n';
  out << "poll_interval = " << real_text(serve.poll_interval.count()) << '\n';
  out << "max_batch = " << serve.max_batch << '\n';
  out << "queue_capacity = " << serve.queue_capacity << '\n';
  out << "request_timeout = " << real_text(serve.request_timeout.count()) << '\n';
  out << "k = " << serve.k << '\n';
  out << "bind = " << bind << '\n';
  return out.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_text()); }

void RunConfig::validate() const {
  // num_classes comes from the data; check the rest with a placeholder.
  ModelConfig probe = model;
  probe.num_classes = std::max<std::size_t>(2, probe.num_classes);
  probe.validate();
  if (train.batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (!(train.base_lr > train.min_lr) || train.min_lr < 0) {
    throw ConfigError("base_lr must exceed min_lr >= 0");
  }
  if (train.momentum < 0 || train.momentum >= 1) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (train.stratify_floor < 1) {
    throw ConfigError("stratify_floor must be >= 1");
  }
  const auto& s = train.split;
  if (!(s.train > 0 && s.validation > 0 && s.test > 0) || std::abs(s.train + s.validation + s.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  if (beam < 1) {
    throw ConfigError("beam must be >= 1");
  }
  hierarchical.validate();
  serve.validate();
  parse_bind(bind);
}

}  // namespace prodcat
