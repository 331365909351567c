#include <random>
#include <string>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pipeit/netdesc.hpp"

using namespace pipeit;

namespace {

Layer conv(std::int64_t in, std::int64_t f, std::int64_t pad, std::int64_t stride, std::int64_t depth = 3,
           std::int64_t ofm = 8) {
  Layer l;
  l.id = 1;
  l.input_w = l.input_h = in;
  l.input_d = depth;
  l.filter_w = l.filter_h = f;
  l.filter_d = depth;
  l.ofm = ofm;
  l.pad = pad;
  l.stride = stride;
  return l;
}

const char* kOneConv = R"({
  "name": "one",
  "layers": [
    {"id": 1, "kind": "conv", "input": [112, 112, 32], "filter": [3, 3, 32], "ofm": 64, "pad": 1, "stride": 1}
  ]
})";

std::size_t line_of(const std::string& doc) {
  try {
    parse_network(doc);
  } catch (const ParseError& e) {
    return e.line;
  }
  return 0;
}

}  // namespace

TEST(ParseNetwork, SingleConvLayer) {
  auto net = parse_network(kOneConv);
  EXPECT_EQ(net.name, "one");
  ASSERT_EQ(net.size(), 1u);
  const Layer& l = net.layers[0];
  EXPECT_EQ(l.kind, LayerKind::Conv);
  EXPECT_EQ(l.input_w, 112);
  EXPECT_EQ(l.filter_d, 32);
  EXPECT_EQ(l.ofm, 64);
  EXPECT_EQ(conv_output_dims(l), (Dims3{112, 112, 64}));
}

TEST(ParseNetwork, ChainingErrorNamesBothLayers) {
  const char* doc = R"({
  "name": "bad",
  "layers": [
    {"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 16, "pad": 1, "stride": 1},
    {"id": 2, "kind": "conv", "input": [8, 8, 12], "filter": [3, 3, 12], "ofm": 16, "pad": 1, "stride": 1}
  ]
})";
  try {
    parse_network(doc);
    FAIL() << "expected a chaining error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("layers 1,2"), std::string::npos) << e.what();
    EXPECT_EQ(e.line, 5u);
  }
}

TEST(ParseNetwork, ReshapeBoundarySkipsChaining) {
  const char* doc = R"({"name": "r", "layers": [
    {"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 16, "pad": 1, "stride": 1},
    {"id": 2, "kind": "conv", "input": [4, 4, 16], "filter": [1, 1, 16], "ofm": 4, "pad": 0, "stride": 1, "reshape": true}
  ]})";
  EXPECT_EQ(parse_network(doc).size(), 2u);
}

TEST(ParseNetwork, FullyConnectedChainsByElementCount) {
  const char* doc = R"({"name": "fc", "layers": [
    {"id": 1, "kind": "conv", "input": [6, 6, 4], "filter": [1, 1, 4], "ofm": 4, "pad": 0, "stride": 1},
    {"id": 2, "kind": "fc", "input": [144, 1, 1], "neurons": 10},
    {"id": 3, "kind": "fc", "input": [1, 1, 11], "neurons": 10}
  ]})";
  try {
    parse_network(doc);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("layers 2,3"), std::string::npos) << e.what();
    EXPECT_EQ(e.line, 4u);
  }
}

TEST(ParseNetwork, SchemaErrorsCarryFieldAndLine) {
  std::string unknown = R"({
  "name": "x",
  "layers": [
    {"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 4, "pad": 0, "stride": 1,
     "dilation": 2}
  ]
})";
  EXPECT_EQ(line_of(unknown), 5u);
  try {
    parse_network(unknown);
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("dilation"), std::string::npos);
  }

  std::string root = "{\n  \"name\": \"x\",\n  \"extra\": 1,\n  \"layers\": []\n}";
  EXPECT_EQ(line_of(root), 3u);

  std::string missing = R"({
  "name": "x",
  "layers": [
    {"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "pad": 0, "stride": 1}
  ]
})";
  try {
    parse_network(missing);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("'ofm'"), std::string::npos);
    EXPECT_EQ(e.line, 4u);
  }

  std::string wrong_type = "{\"name\": \"x\", \"layers\": [\n{\"id\": 1, \"kind\": \"conv\", \"input\": [8, 8, 3],\n"
                           "\"filter\": [3, 3, 3], \"ofm\": \"four\", \"pad\": 0, \"stride\": 1}]}";
  EXPECT_EQ(line_of(wrong_type), 3u);

  EXPECT_EQ(line_of("{\"name\": \"x\",\n\"layers\": [\n}"), 3u);
  EXPECT_THROW(parse_network(R"({"name": "x", "layers": []})"), ParseError);
  EXPECT_THROW(parse_network(R"({"layers": []})"), ParseError);
}

TEST(ParseNetwork, RejectsBadGeometryAndKinds) {
  auto doc = [](const std::string& layer) { return R"({"name": "x", "layers": [)" + layer + "]}"; };
  EXPECT_THROW(parse_network(doc(R"({"id": 1, "kind": "pool", "input": [8, 8, 3], "neurons": 1})")), ParseError);
  EXPECT_THROW(parse_network(doc(R"({"id": 2, "kind": "fc", "input": [8, 8, 3], "neurons": 1})")), ParseError);
  EXPECT_THROW(parse_network(doc(R"({"id": 1, "kind": "fc", "input": [8, 8, 3], "neurons": 0})")), ParseError);
  EXPECT_THROW(parse_network(doc(R"({"id": 1, "kind": "fc", "input": [8, 8, 3], "neurons": 4, "ofm": 2})")),
               ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "conv", "input": [0, 8, 3], "filter": [3, 3, 3], "ofm": 4, "pad": 0, "stride": 1})")),
      ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 4], "ofm": 4, "pad": 0, "stride": 1})")),
      ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "conv", "input": [2, 2, 3], "filter": [5, 5, 3], "ofm": 4, "pad": 1, "stride": 1})")),
      ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 4, "pad": -1, "stride": 1})")),
      ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "conv", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 4, "pad": 0, "stride": 0})")),
      ParseError);
  EXPECT_THROW(
      parse_network(doc(R"({"id": 1, "kind": "depthwise", "input": [8, 8, 3], "filter": [3, 3, 3], "ofm": 3, "pad": 1, "stride": 1})")),
      ParseError);
  EXPECT_NO_THROW(
      parse_network(doc(R"({"id": 1, "kind": "depthwise", "input": [8, 8, 3], "filter": [3, 3, 1], "ofm": 6, "pad": 1, "stride": 1})")));
}

TEST(ConvOutputDims, Examples) {
  EXPECT_EQ(conv_output_dims(conv(112, 1, 0, 1)).w, 112);
  EXPECT_EQ(conv_output_dims(conv(56, 3, 1, 2)).w, 28);
  EXPECT_EQ(conv_output_dims(conv(7, 7, 0, 1)).w, 1);
  EXPECT_THROW(conv_output_dims(conv(3, 7, 1, 1)), DomainError);
}

TEST(ConvOutputDims, RectangularInput) {
  Layer l = conv(10, 3, 0, 1);
  l.input_h = 20;
  l.filter_h = 5;
  EXPECT_EQ(conv_output_dims(l), (Dims3{8, 16, 8}));
}

TEST(ConvOutputDims, MatchesWindowCountAndShrinksWithStride) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> in(1, 64), f(1, 11), pad(0, 3);
  int checked = 0;
  while (checked < 2000) {
    const int i = in(rng), ff = f(rng), p = pad(rng);
    if (ff > i + 2 * p) continue;
    std::int64_t prev = std::numeric_limits<std::int64_t>::max();
    for (int s = 1; s <= 6; ++s) {
      auto o = conv_output_dims(conv(i, ff, p, s)).w;
      ASSERT_EQ(o, oracle::window_positions(i, ff, p, s)) << i << ' ' << ff << ' ' << p << ' ' << s;
      ASSERT_GE(o, 1);
      ASSERT_LE(o, prev);
      prev = o;
    }
    ++checked;
  }
}

TEST(GemmDims, Examples) {
  // 28x28 output from a 3x3x32 filter, 64 maps
  EXPECT_EQ(gemm_dims(conv(28, 3, 1, 1, 32, 64)), (GemmDims{784, 288, 64}));
  Layer fc;
  fc.id = 1;
  fc.kind = LayerKind::FullyConnected;
  fc.input_w = 4096;
  fc.neurons = 1000;
  EXPECT_EQ(gemm_dims(fc), (GemmDims{1, 4096, 1000}));
  EXPECT_EQ(gemm_dims(conv(1, 1, 0, 1, 1, 1)), (GemmDims{1, 1, 1}));

  Layer dw = conv(14, 3, 1, 1, 32, 32);
  dw.kind = LayerKind::DepthwiseConv;
  dw.filter_d = 1;
  EXPECT_EQ(gemm_dims(dw), (GemmDims{196, 9, 32}));
}

TEST(GemmDims, OperationCountIdentity) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> in(1, 56), f(1, 7), pad(0, 2), s(1, 3), d(1, 64), m(1, 64);
  for (int n = 0; n < 2000; ++n) {
    Layer l = conv(in(rng), f(rng), pad(rng), s(rng), d(rng), m(rng));
    l.input_h += 3;
    l.filter_h = std::min<std::int64_t>(l.filter_h + 1, l.input_h);
    if (l.filter_w > l.input_w + 2 * l.pad) continue;
    auto g = gemm_dims(l);
    auto o = conv_output_dims(l);
    EXPECT_EQ(g.n * g.k * g.m, o.w * o.h * l.filter_w * l.filter_h * l.filter_d * l.ofm);
  }
}

TEST(Fixtures, ResNet50HasFiftyFourMajorLayers) {
  auto net = load_network(oracle::data_path("resnet50.json"));
  EXPECT_EQ(net.size(), 54u);
  EXPECT_EQ(net.layers.back().kind, LayerKind::FullyConnected);
  EXPECT_EQ(net.layers.back().neurons, 1000);
  EXPECT_EQ(gemm_dims(net.layers.front()), (GemmDims{112 * 112, 7 * 7 * 3, 64}));
}

TEST(Fixtures, AlexNetHasElevenMajorLayers) {
  auto net = load_network(oracle::data_path("alexnet.json"));
  EXPECT_EQ(net.size(), 11u);
  int fc = 0;
  for (auto& l : net.layers) fc += l.kind == LayerKind::FullyConnected;
  EXPECT_EQ(fc, 3);
}

TEST(Serialize, RoundTripPreservesContent) {
  for (const char* name : {"resnet50.json", "alexnet.json"}) {
    auto a = load_network(oracle::data_path(name));
    auto b = parse_network(serialize_network(a));
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a.name, b.name);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const Layer &x = a.layers[i], &y = b.layers[i];
      EXPECT_EQ(x.kind, y.kind);
      EXPECT_EQ(gemm_dims(x), gemm_dims(y));
      EXPECT_EQ(x.reshape, y.reshape);
      EXPECT_EQ(x.label, y.label);
      EXPECT_EQ(x.input_elements(), y.input_elements());
      EXPECT_EQ(x.pad, y.pad);
      EXPECT_EQ(x.stride, y.stride);
    }
    EXPECT_EQ(serialize_network(a), serialize_network(b));
  }
}

TEST(Serialize, RoundTripRandomChains) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> f(1, 3), m(1, 32), kind(0, 3);
  for (int rep = 0; rep < 200; ++rep) {
    Network net{"chain" + std::to_string(rep), {}};
    std::int64_t w = 32, d = 3;
    for (int i = 1; i <= 8; ++i) {
      Layer l;
      l.id = i;
      l.input_w = l.input_h = w;
      l.input_d = d;
      if (kind(rng) == 0 && i > 1) {
        l.kind = LayerKind::FullyConnected;
        l.neurons = m(rng);
        net.layers.push_back(l);
        w = 1, d = l.neurons;
        continue;
      }
      const std::int64_t fs = std::min<std::int64_t>(2 * f(rng) - 1, w);
      l.filter_w = l.filter_h = fs;
      if (kind(rng) == 1) {
        l.kind = LayerKind::DepthwiseConv;
        l.filter_d = 1;
        l.ofm = d;
      } else {
        l.filter_d = d;
        l.ofm = m(rng);
      }
      l.pad = fs / 2;
      l.label = "L" + std::to_string(i);
      net.layers.push_back(l);
      auto o = conv_output_dims(l);
      w = o.w, d = o.d;
    }
    validate_network(net);
    auto back = parse_network(serialize_network(net));
    EXPECT_EQ(serialize_network(back), serialize_network(net));
  }
}
