#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/nn.hpp"
#include "ace/selnet.hpp"

// Plain-text model files.
//
//   ace-model
//   format_version 1            (1 = plain classifier, 2 = selnet)
//   seed <u64>
//   class_count <K>
//   stack <name> <layer count>  (name: network | backbone | prediction | selector | auxiliary)
//   layer <in> <out> <relu|identity> <dropout>
//   weights <out*in values>
//   bias <out values>
//   ...
//   end
//
// Floating-point values use 17 significant digits so a save/load cycle is exact.

namespace ace {

inline constexpr int kPlainModelVersion = 1;
inline constexpr int kSelNetModelVersion = 2;

using Model = std::variant<Network, SelNetParams>;

namespace detail {

inline void write_stack(std::ostream& os, const std::string& name, const Network& net) {
  os << "stack " << name << ' ' << net.layers.size() << '\n';
  for (const auto& l : net.layers) {
    os << "layer " << l.spec.in_dim << ' ' << l.spec.out_dim << ' ' << to_string(l.spec.activation)
       << ' ' << format_exact(l.spec.dropout_rate) << '\n';
    os << "weights";
    for (double w : l.weights) os << ' ' << format_exact(w);
    os << "\nbias";
    for (double b : l.bias) os << ' ' << format_exact(b);
    os << '\n';
  }
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  // Next non-empty line split on whitespace; first token must be `key`.
  std::vector<std::string> expect(const std::string& key) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!trim(line).empty()) break;
      line.clear();
    }
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    for (std::string t; ss >> t;) tokens.push_back(t);
    if (tokens.empty() || tokens.front() != key) {
      throw ConfigError("model file line " + std::to_string(line_no_) + ": expected '" + key + "'");
    }
    tokens.erase(tokens.begin());
    return tokens;
  }

  std::string single(const std::string& key) {
    auto t = expect(key);
    if (t.size() != 1) throw ConfigError("model file: '" + key + "' takes one value");
    return t.front();
  }

 private:
  std::istream& is_;
  std::size_t line_no_ = 0;
};

inline Network read_stack(LineReader& in, const std::string& name, bool classifier) {
  const auto header = in.expect("stack");
  if (header.size() != 2 || header[0] != name) {
    throw ConfigError("model file: expected stack '" + name + "'");
  }
  const auto n_layers = parse_unsigned(header[1]);
  std::vector<LayerSpec> specs;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> values;
  for (unsigned long long i = 0; i < n_layers; ++i) {
    const auto fields = in.expect("layer");
    if (fields.size() != 4) throw ConfigError("model file: malformed layer line");
    LayerSpec s;
    s.in_dim = parse_unsigned(fields[0]);
    s.out_dim = parse_unsigned(fields[1]);
    if (fields[2] == "relu") {
      s.activation = Activation::relu;
    } else if (fields[2] == "identity") {
      s.activation = Activation::identity;
    } else {
      throw ConfigError("model file: unknown activation '" + fields[2] + "'");
    }
    s.dropout_rate = parse_double(fields[3]);
    std::vector<double> w, b;
    for (const auto& t : in.expect("weights")) w.push_back(parse_double(t));
    for (const auto& t : in.expect("bias")) b.push_back(parse_double(t));
    if (w.size() != s.in_dim * s.out_dim || b.size() != s.out_dim) {
      throw DimensionError("model file: parameter count does not match layer shape");
    }
    specs.push_back(s);
    values.emplace_back(std::move(w), std::move(b));
  }
  Network net(specs, classifier);
  for (std::size_t i = 0; i < values.size(); ++i) {
    net.layers[i].weights = std::move(values[i].first);
    net.layers[i].bias = std::move(values[i].second);
  }
  return net;
}

}  // namespace detail

inline void write_model(std::ostream& os, const Network& net) {
  os << "ace-model\nformat_version " << kPlainModelVersion << "\nseed " << net.seed
     << "\nclass_count " << net.class_count << '\n';
  detail::write_stack(os, "network", net);
  os << "end\n";
}

inline void write_model(std::ostream& os, const SelNetParams& p) {
  os << "ace-model\nformat_version " << kSelNetModelVersion << "\nseed " << p.seed
     << "\nclass_count " << p.class_count << '\n';
  detail::write_stack(os, "backbone", p.backbone);
  detail::write_stack(os, "prediction", p.prediction_head);
  detail::write_stack(os, "selector", p.selector_head);
  detail::write_stack(os, "auxiliary", p.auxiliary_head);
  os << "end\n";
}

inline Model read_model(std::istream& is) {
  detail::LineReader in(is);
  in.expect("ace-model");
  const auto version = parse_unsigned(in.single("format_version"));
  const auto seed = parse_unsigned(in.single("seed"));
  const auto class_count = parse_unsigned(in.single("class_count"));
  if (version == kPlainModelVersion) {
    Network net = detail::read_stack(in, "network", true);
    if (net.class_count != class_count) throw DimensionError("model file: class_count mismatch");
    net.seed = seed;
    in.expect("end");
    return net;
  }
  if (version == kSelNetModelVersion) {
    SelNetParams p;
    p.backbone = detail::read_stack(in, "backbone", false);
    p.prediction_head = detail::read_stack(in, "prediction", true);
    p.selector_head = detail::read_stack(in, "selector", true);
    p.auxiliary_head = detail::read_stack(in, "auxiliary", true);
    p.class_count = class_count;
    p.seed = seed;
    validate(p);
    in.expect("end");
    return p;
  }
  throw ConfigError("model file: unsupported format_version " + std::to_string(version));
}

template <typename Params>
void save_model(const std::string& path, const Params& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write model file '" + path + "'");
  write_model(os, params);
  if (!os) throw ConfigError("failed writing model file '" + path + "'");
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open model file '" + path + "'");
  return read_model(is);
}

}  // namespace ace
