#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pipeit/error.hpp"

namespace pipeit {

enum class LayerKind { Conv, DepthwiseConv, FullyConnected };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise";
    case LayerKind::FullyConnected: return "fc";
  }
  return "?";
}

struct Layer {
  int id = 0;  // 1-based network position
  LayerKind kind = LayerKind::Conv;
  std::int64_t input_w = 1, input_h = 1, input_d = 1;
  std::int64_t filter_w = 1, filter_h = 1, filter_d = 1;
  std::int64_t ofm = 1;
  std::int64_t pad = 0;
  std::int64_t stride = 1;
  std::int64_t neurons = 0;  // fully-connected only
  bool reshape = false;      // input is not the previous layer's output tensor
  std::string label;

  bool is_conv() const { return kind != LayerKind::FullyConnected; }
  std::int64_t input_elements() const { return input_w * input_h * input_d; }
};

struct Network {
  std::string name;
  std::vector<Layer> layers;

  std::size_t size() const { return layers.size(); }
};

struct Dims3 {
  std::int64_t w, h, d;
  bool operator==(const Dims3&) const = default;
};

struct GemmDims {
  std::int64_t n = 1, k = 1, m = 1;
  bool operator==(const GemmDims&) const = default;
};

// Invalid layer or layer pair; layer is the id to report against.
struct LayerError : DomainError {
  int layer;
  LayerError(const std::string& what, int layer_) : DomainError(what), layer(layer_) {}
};

inline Dims3 conv_output_dims(const Layer& l) {
  if (!l.is_conv()) throw LayerError("layer " + std::to_string(l.id) + ": not a convolution", l.id);
  if (l.stride < 1) throw LayerError("layer " + std::to_string(l.id) + ": stride must be >= 1", l.id);
  const std::int64_t sw = l.input_w - l.filter_w + 2 * l.pad;
  const std::int64_t sh = l.input_h - l.filter_h + 2 * l.pad;
  if (sw < 0 || sh < 0)
    throw LayerError("layer " + std::to_string(l.id) + ": filter larger than padded input", l.id);
  return {sw / l.stride + 1, sh / l.stride + 1, l.ofm};
}

// Output tensor of any layer kind; fully-connected layers emit 1x1xneurons.
inline Dims3 output_dims(const Layer& l) {
  if (l.kind == LayerKind::FullyConnected) return {1, 1, l.neurons};
  return conv_output_dims(l);
}

inline GemmDims gemm_dims(const Layer& l) {
  switch (l.kind) {
    case LayerKind::FullyConnected:
      return {1, l.input_elements(), l.neurons};
    case LayerKind::DepthwiseConv: {
      auto o = conv_output_dims(l);
      return {o.w * o.h, l.filter_w * l.filter_h, l.ofm};
    }
    case LayerKind::Conv: {
      auto o = conv_output_dims(l);
      return {o.w * o.h, l.filter_w * l.filter_h * l.filter_d, l.ofm};
    }
  }
  return {};
}

namespace detail {

inline std::string lid(int id) { return "layer " + std::to_string(id); }

inline void check_layer(const Layer& l) {
  auto positive = [&](std::int64_t v, const char* f) {
    if (v < 1) throw LayerError(lid(l.id) + ": " + f + " must be >= 1, got " + std::to_string(v), l.id);
  };
  positive(l.input_w, "input width");
  positive(l.input_h, "input height");
  positive(l.input_d, "input depth");
  if (l.kind == LayerKind::FullyConnected) {
    positive(l.neurons, "neurons");
    return;
  }
  positive(l.filter_w, "filter width");
  positive(l.filter_h, "filter height");
  positive(l.filter_d, "filter depth");
  positive(l.ofm, "ofm");
  positive(l.stride, "stride");
  if (l.pad < 0) throw LayerError(lid(l.id) + ": pad must be >= 0", l.id);
  if (l.kind == LayerKind::Conv && l.filter_d != l.input_d)
    throw LayerError(lid(l.id) + ": filter depth " + std::to_string(l.filter_d) +
                      " does not match input depth " + std::to_string(l.input_d), l.id);
  if (l.kind == LayerKind::DepthwiseConv) {
    if (l.filter_d != 1) throw LayerError(lid(l.id) + ": depthwise filter depth must be 1", l.id);
    if (l.ofm % l.input_d != 0)
      throw LayerError(lid(l.id) + ": depthwise ofm must be a multiple of input depth", l.id);
  }
  conv_output_dims(l);
}

}  // namespace detail

// Checks every layer invariant and the chaining between consecutive layers.
inline void validate_network(const Network& net) {
  if (net.layers.empty()) throw DomainError("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    if (l.id != static_cast<int>(i + 1))
      throw LayerError("layer ids must be 1..W in order; position " + std::to_string(i + 1) +
                           " has id " + std::to_string(l.id),
                       static_cast<int>(i + 1));
    detail::check_layer(l);
  }
  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    const Layer& prev = net.layers[i - 1];
    const Layer& cur = net.layers[i];
    if (cur.reshape) continue;
    Dims3 o = output_dims(prev);
    Dims3 in{cur.input_w, cur.input_h, cur.input_d};
    if (cur.kind == LayerKind::FullyConnected) {
      // a dense layer only needs the element count to line up
      if (o.w * o.h * o.d == cur.input_elements()) continue;
    } else if (o == in) {
      continue;
    }
    std::ostringstream os;
    os << "layers " << prev.id << "," << cur.id << ": layer " << prev.id << " outputs [" << o.w
       << "," << o.h << "," << o.d << "] but layer " << cur.id << " expects [" << in.w << ","
       << in.h << "," << in.d << "]";
    throw LayerError(os.str(), cur.id);
  }
}

namespace detail {

// Forward iterator that records the furthest byte the JSON lexer has read,
// so parse callbacks can be mapped back to source lines.
struct TrackingIter {
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  const char* p = nullptr;
  const char** mark = nullptr;

  reference operator*() const {
    if (p > *mark) *mark = p;
    return *p;
  }
  TrackingIter& operator++() {
    ++p;
    return *this;
  }
  TrackingIter operator++(int) {
    auto t = *this;
    ++p;
    return t;
  }
  bool operator==(const TrackingIter& o) const { return p == o.p; }
  bool operator!=(const TrackingIter& o) const { return p != o.p; }
};

struct LineCounter {
  const char* begin;
  const char* at;
  std::size_t line = 1;
  std::size_t operator()(const char* pos) {
    if (pos < at) {
      at = begin;
      line = 1;
    }
    for (; at < pos; ++at)
      if (*at == '\n') ++line;
    return line;
  }
};

struct LayerLines {
  std::size_t start = 0;
  std::map<std::string, std::size_t> keys;
  std::size_t of(const std::string& k) const {
    auto it = keys.find(k);
    return it == keys.end() ? start : it->second;
  }
};

}  // namespace detail

inline LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise") return LayerKind::DepthwiseConv;
  if (s == "fc") return LayerKind::FullyConnected;
  throw DomainError("unknown layer kind '" + s + "' (expected conv, depthwise or fc)");
}

inline Network parse_network(std::string_view text) {
  using nlohmann::json;
  const char* mark = text.data();
  detail::LineCounter lines{text.data(), text.data()};
  std::map<std::string, std::size_t> root_keys;
  std::vector<detail::LayerLines> layer_lines;
  std::string root_key;

  auto cb = [&](int depth, json::parse_event_t ev, json& v) {
    std::size_t ln = lines(mark);
    if (ev == json::parse_event_t::key) {
      std::string k = v.get<std::string>();
      if (depth == 1) {
        root_key = k;
        root_keys[k] = ln;
      } else if (depth == 3 && root_key == "layers" && !layer_lines.empty()) {
        layer_lines.back().keys[k] = ln;
      }
    } else if (ev == json::parse_event_t::object_start && depth == 2 && root_key == "layers") {
      layer_lines.push_back({ln, {}});
    }
    return true;
  };

  json doc;
  detail::TrackingIter first{text.data(), &mark};
  detail::TrackingIter last{text.data() + text.size(), &mark};
  try {
    doc = json::parse(first, last, cb);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), lines(text.data() + std::min(e.byte, text.size())));
  }

  auto root_line = [&](const std::string& k) {
    auto it = root_keys.find(k);
    return it == root_keys.end() ? std::size_t{1} : it->second;
  };
  if (!doc.is_object()) throw ParseError("network document must be a JSON object", 1);
  for (auto& [k, _] : doc.items())
    if (k != "name" && k != "layers") throw ParseError("unknown field '" + k + "'", root_line(k));
  if (!doc.contains("name") || !doc["name"].is_string())
    throw ParseError("field 'name' missing or not a string", root_line("name"));
  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw ParseError("field 'layers' missing or not an array", root_line("layers"));

  Network net;
  net.name = doc["name"].get<std::string>();
  const json& arr = doc["layers"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& j = arr[i];
    detail::LayerLines ll = i < layer_lines.size() ? layer_lines[i] : detail::LayerLines{};
    std::string where = "layers[" + std::to_string(i) + "]";
    if (!j.is_object()) throw ParseError(where + " must be an object", ll.start);

    static const char* known[] = {"id",  "kind",   "input",   "filter", "ofm",
                                  "pad", "stride", "neurons", "label",  "reshape"};
    for (auto& [k, _] : j.items()) {
      bool ok = false;
      for (const char* kn : known) ok = ok || k == kn;
      if (!ok) throw ParseError(where + ": unknown field '" + k + "'", ll.of(k));
    }
    auto need = [&](const char* k) -> const json& {
      if (!j.contains(k)) throw ParseError(where + ": missing field '" + std::string(k) + "'", ll.start);
      return j[k];
    };
    auto integer = [&](const char* k) -> std::int64_t {
      const json& v = need(k);
      if (!v.is_number_integer()) throw ParseError(where + ": field '" + std::string(k) + "' must be an integer", ll.of(k));
      return v.get<std::int64_t>();
    };
    auto triple = [&](const char* k) -> Dims3 {
      const json& v = need(k);
      if (!v.is_array() || v.size() != 3)
        throw ParseError(where + ": field '" + std::string(k) + "' must be [w,h,d]", ll.of(k));
      for (auto& e : v)
        if (!e.is_number_integer())
          throw ParseError(where + ": field '" + std::string(k) + "' must hold integers", ll.of(k));
      return {v[0].get<std::int64_t>(), v[1].get<std::int64_t>(), v[2].get<std::int64_t>()};
    };

    Layer l;
    l.id = static_cast<int>(integer("id"));
    const json& kind = need("kind");
    if (!kind.is_string()) throw ParseError(where + ": field 'kind' must be a string", ll.of("kind"));
    try {
      l.kind = parse_kind(kind.get<std::string>());
    } catch (const DomainError& e) {
      throw ParseError(where + ": " + e.what(), ll.of("kind"));
    }
    Dims3 in = triple("input");
    l.input_w = in.w, l.input_h = in.h, l.input_d = in.d;
    if (l.is_conv()) {
      Dims3 f = triple("filter");
      l.filter_w = f.w, l.filter_h = f.h, l.filter_d = f.d;
      l.ofm = integer("ofm");
      l.pad = integer("pad");
      l.stride = integer("stride");
      if (j.contains("neurons"))
        throw ParseError(where + ": 'neurons' only applies to fc layers", ll.of("neurons"));
    } else {
      l.neurons = integer("neurons");
      for (const char* k : {"filter", "ofm", "pad", "stride"})
        if (j.contains(k))
          throw ParseError(where + ": '" + std::string(k) + "' does not apply to fc layers", ll.of(k));
    }
    if (j.contains("label")) {
      if (!j["label"].is_string()) throw ParseError(where + ": field 'label' must be a string", ll.of("label"));
      l.label = j["label"].get<std::string>();
    }
    if (j.contains("reshape")) {
      if (!j["reshape"].is_boolean())
        throw ParseError(where + ": field 'reshape' must be a boolean", ll.of("reshape"));
      l.reshape = j["reshape"].get<bool>();
    }
    if (l.id != static_cast<int>(i + 1))
      throw ParseError(where + ": id " + std::to_string(l.id) + " out of sequence, expected " +
                           std::to_string(i + 1),
                       ll.of("id"));
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw ParseError("field 'layers' is empty", root_line("layers"));

  try {
    validate_network(net);
  } catch (const LayerError& e) {
    std::size_t id = static_cast<std::size_t>(e.layer);
    throw ParseError(e.what(), id >= 1 && id <= layer_lines.size() ? layer_lines[id - 1].start : 0);
  }
  return net;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Network load_network(const std::string& path) { return parse_network(read_text_file(path)); }

// One layer per line, keys in schema order.
inline std::string serialize_network(const Network& net) {
  std::ostringstream os;
  os << "{\n  \"name\": " << nlohmann::json(net.name).dump() << ",\n  \"layers\": [\n";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    nlohmann::ordered_json j;
    j["id"] = l.id;
    j["kind"] = kind_name(l.kind);
    j["input"] = {l.input_w, l.input_h, l.input_d};
    if (l.is_conv()) {
      j["filter"] = {l.filter_w, l.filter_h, l.filter_d};
      j["ofm"] = l.ofm;
      j["pad"] = l.pad;
      j["stride"] = l.stride;
    } else {
      j["neurons"] = l.neurons;
    }
    if (l.reshape) j["reshape"] = true;
    if (!l.label.empty()) j["label"] = l.label;
    os << "    " << j.dump() << (i + 1 < net.layers.size() ? ",\n" : "\n");
  }
  os << "  ]\n}\n";
  return os.str();
}

}  // namespace pipeit
