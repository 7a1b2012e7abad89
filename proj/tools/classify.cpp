#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <exception>
#include <iostream>

#include "dualcore/checkpoint.hpp"
#include "dualcore/model.hpp"

using namespace dualcore;

int main(int argc, char** argv) {
  CLI::App app{"Benign/malignant diagnosis from the two-scale ROI pair; prints JSON."};
  std::string ckpt, ctx_path, tight_path, model = "tiny";
  app.add_option("--checkpoint", ckpt, "model checkpoint")->required();
  app.add_option("--image-context", ctx_path, "contextual ROI PNG (classifier path)")->required();
  app.add_option("--image-tight", tight_path, "tight ROI PNG (segmentation path)")->required();
  app.add_option("--model", model, "model preset: tiny|full|micro")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    DualCoreConfig cfg = model == "full"   ? DualCoreConfig::full()
                         : model == "micro" ? DualCoreConfig::micro()
                                            : DualCoreConfig::tiny();
    DualCoreNet<double> net(cfg, 0);
    load_checkpoint(net.params(), ckpt);

    const std::int64_t S = cfg.lpl.input_size;
    auto load = [&](const std::string& p) {
      GrayImage img = png_io::read_gray(p);
      if (img.dims != Shape{S, S}) img = clamp01(resize_bicubic(img, S, S));
      Tensor<double> x({1, 1, S, S});
      std::copy(img.v.begin(), img.v.end(), x.v.begin());
      return x;
    };
    NoGradGuard guard;
    auto out = net.forward(Var<double>(load(ctx_path)), Var<double>(load(tight_path)),
                           FwdCtx<double>{});
    const double p_benign = out.diagnosis.probs.value()[0];
    const double p_malignant = out.diagnosis.probs.value()[1];
    nlohmann::json j;
    j["p_benign"] = p_benign;
    j["p_malignant"] = p_malignant;
    j["predicted_label"] = p_malignant >= p_benign ? 1 : 0;
    std::cout << j.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::fprintf(stderr, "classify: %s\n", e.what());
    return 1;
  }
  return 0;
}
