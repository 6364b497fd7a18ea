#include <stdexcept>

#include "spnet/model_spec.hpp"

namespace spnet {

namespace {

void conv_bn_act(std::vector<LayerSpec>& layers, int out, int kernel, int stride,
                 Activation act, bool bias = false) {
  layers.push_back(LayerSpec::conv(out, kernel, stride, kernel / 2, bias));
  layers.push_back(LayerSpec::bn());
  if (act != Activation::none) layers.push_back(LayerSpec::act(act));
}

BlockSpec bottleneck(int mid, int out, int stride, bool projection) {
  BlockSpec b;
  b.kind = BlockKind::residual_bottleneck;
  b.has_join = true;
  conv_bn_act(b.layers, mid, 1, 1, Activation::relu);
  conv_bn_act(b.layers, mid, 3, stride, Activation::relu);
  conv_bn_act(b.layers, out, 1, 1, Activation::none);
  LayerSpec post = LayerSpec::act(Activation::relu);
  post.follows_join = true;
  b.layers.push_back(post);
  if (projection) conv_bn_act(b.shortcut, out, 1, stride, Activation::none);
  return b;
}

BlockSpec inverted_residual(int in, int out, int expansion, int stride) {
  BlockSpec b;
  b.kind = BlockKind::inverted_residual;
  b.has_join = stride == 1 && in == out;
  const int hidden = in * expansion;
  if (expansion != 1) conv_bn_act(b.layers, hidden, 1, 1, Activation::relu6);
  b.layers.push_back(LayerSpec::depthwise(hidden, 3, stride, 1));
  b.layers.push_back(LayerSpec::bn());
  b.layers.push_back(LayerSpec::act(Activation::relu6));
  conv_bn_act(b.layers, out, 1, 1, Activation::none);
  return b;
}

BlockSpec depthwise_separable(int in, int out, int stride, Activation act) {
  BlockSpec b;
  b.kind = BlockKind::depthwise_separable;
  b.layers.push_back(LayerSpec::depthwise(in, 3, stride, 1));
  b.layers.push_back(LayerSpec::bn());
  b.layers.push_back(LayerSpec::act(act));
  conv_bn_act(b.layers, out, 1, 1, act);
  return b;
}

BlockSpec plain(std::vector<LayerSpec> layers) {
  BlockSpec b;
  b.kind = BlockKind::plain;
  b.layers = std::move(layers);
  return b;
}

BlockSpec head(int classes) {
  return plain({LayerSpec::global_avg_pool(), LayerSpec::linear(classes)});
}

ModelSpec make(std::string name, int h, int classes) {
  ModelSpec spec;
  spec.name = std::move(name);
  spec.in_channels = 3;
  spec.in_h = h;
  spec.in_w = h;
  spec.num_classes = classes;
  return spec;
}

ModelSpec micro_vgg(int classes) {
  ModelSpec spec = make("micro_vgg", 32, classes);
  std::vector<LayerSpec> l;
  conv_bn_act(l, 16, 3, 1, Activation::relu);
  conv_bn_act(l, 16, 3, 1, Activation::relu);
  l.push_back(LayerSpec::max_pool(2, 2));
  conv_bn_act(l, 32, 3, 1, Activation::relu);
  conv_bn_act(l, 32, 3, 1, Activation::relu);
  l.push_back(LayerSpec::max_pool(2, 2));
  conv_bn_act(l, 64, 3, 1, Activation::relu);
  l.push_back(LayerSpec::max_pool(2, 2));
  spec.blocks.push_back(plain(std::move(l)));
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec micro_resnet(int classes) {
  ModelSpec spec = make("micro_resnet", 32, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 16, 3, 1, Activation::relu);
  spec.blocks.push_back(plain(std::move(stem)));
  const int mids[] = {8, 12, 16};
  const int outs[] = {32, 48, 64};
  const int strides[] = {1, 2, 2};
  for (int s = 0; s < 3; ++s) {
    spec.blocks.push_back(bottleneck(mids[s], outs[s], strides[s], true));
    spec.blocks.push_back(bottleneck(mids[s], outs[s], 1, false));
  }
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec micro_mobilenet_v1(int classes) {
  ModelSpec spec = make("micro_mobilenet_v1", 32, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 16, 3, 1, Activation::relu);
  spec.blocks.push_back(plain(std::move(stem)));
  spec.blocks.push_back(depthwise_separable(16, 32, 1, Activation::relu));
  spec.blocks.push_back(depthwise_separable(32, 48, 2, Activation::relu));
  spec.blocks.push_back(depthwise_separable(48, 64, 2, Activation::relu));
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec micro_mobilenet_v2(int classes) {
  ModelSpec spec = make("micro_mobilenet_v2", 32, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 16, 3, 1, Activation::relu6);
  spec.blocks.push_back(plain(std::move(stem)));
  spec.blocks.push_back(inverted_residual(16, 16, 2, 1));
  spec.blocks.push_back(inverted_residual(16, 24, 2, 2));
  spec.blocks.push_back(inverted_residual(24, 24, 2, 1));
  spec.blocks.push_back(inverted_residual(24, 32, 2, 2));
  spec.blocks.push_back(inverted_residual(32, 32, 2, 1));
  std::vector<LayerSpec> last;
  conv_bn_act(last, 64, 1, 1, Activation::relu6);
  spec.blocks.push_back(plain(std::move(last)));
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec resnet50(int classes) {
  ModelSpec spec = make("resnet50", 224, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 64, 7, 2, Activation::relu);
  stem.push_back(LayerSpec::max_pool(3, 2, 1));
  spec.blocks.push_back(plain(std::move(stem)));
  const int depth[] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    const int mid = 64 << s;
    for (int i = 0; i < depth[s]; ++i) {
      const int stride = (i == 0 && s > 0) ? 2 : 1;
      spec.blocks.push_back(bottleneck(mid, mid * 4, stride, i == 0));
    }
  }
  spec.blocks.push_back(head(classes));
  return spec;
}

// VGG-19 convolution stack with batch norm, followed by global pooling and a
// single classifier layer.
ModelSpec vggnet(int classes) {
  ModelSpec spec = make("vggnet", 224, classes);
  const int cfg[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512,
                     512, 512, 0, 512, 512, 512, 512, 0};
  std::vector<LayerSpec> l;
  for (int c : cfg) {
    if (c == 0) {
      l.push_back(LayerSpec::max_pool(2, 2));
    } else {
      conv_bn_act(l, c, 3, 1, Activation::relu, true);
    }
  }
  spec.blocks.push_back(plain(std::move(l)));
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec mobilenet_v1(int classes) {
  ModelSpec spec = make("mobilenet_v1", 224, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 32, 3, 2, Activation::relu);
  spec.blocks.push_back(plain(std::move(stem)));
  const int cfg[][2] = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1},
                        {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};
  int in = 32;
  for (const auto& c : cfg) {
    spec.blocks.push_back(depthwise_separable(in, c[0], c[1], Activation::relu));
    in = c[0];
  }
  spec.blocks.push_back(head(classes));
  return spec;
}

ModelSpec mobilenet_v2(int classes) {
  ModelSpec spec = make("mobilenet_v2", 224, classes);
  std::vector<LayerSpec> stem;
  conv_bn_act(stem, 32, 3, 2, Activation::relu6);
  spec.blocks.push_back(plain(std::move(stem)));
  // expansion, out channels, repeats, first stride
  const int cfg[][4] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                        {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  int in = 32;
  for (const auto& c : cfg) {
    for (int i = 0; i < c[2]; ++i) {
      spec.blocks.push_back(inverted_residual(in, c[1], c[0], i == 0 ? c[3] : 1));
      in = c[1];
    }
  }
  std::vector<LayerSpec> last;
  conv_bn_act(last, 1280, 1, 1, Activation::relu6);
  spec.blocks.push_back(plain(std::move(last)));
  spec.blocks.push_back(head(classes));
  return spec;
}

}  // namespace

std::vector<std::string> zoo_names() {
  return {"micro_vgg", "micro_resnet", "micro_mobilenet_v1", "micro_mobilenet_v2",
          "resnet50",  "vggnet",       "mobilenet_v1",       "mobilenet_v2"};
}

ModelSpec zoo(std::string_view name, int num_classes) {
  auto classes = [&](int def) { return num_classes > 0 ? num_classes : def; };
  if (name == "micro_vgg") return micro_vgg(classes(10));
  if (name == "micro_resnet") return micro_resnet(classes(10));
  if (name == "micro_mobilenet_v1") return micro_mobilenet_v1(classes(10));
  if (name == "micro_mobilenet_v2") return micro_mobilenet_v2(classes(10));
  if (name == "resnet50") return resnet50(classes(1000));
  if (name == "vggnet") return vggnet(classes(1000));
  if (name == "mobilenet_v1") return mobilenet_v1(classes(1000));
  if (name == "mobilenet_v2") return mobilenet_v2(classes(1000));
  throw std::invalid_argument("unknown model '" + std::string(name) + "'");
}

}  // namespace spnet
