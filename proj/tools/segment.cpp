#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "dualcore/checkpoint.hpp"
#include "dualcore/metrics.hpp"
#include "dualcore/model.hpp"

using namespace dualcore;

int main(int argc, char** argv) {
  CLI::App app{"Segment a tight-crop ROI; writes the CRF-head mask as 8-bit {0,255} PNG."};
  std::string ckpt, image_path, out_mask, model = "tiny";
  bool emit_cnn_head = false;
  app.add_option("--checkpoint", ckpt, "model checkpoint")->required();
  app.add_option("--image", image_path, "input grayscale PNG (tight-crop scale)")->required();
  app.add_option("--out-mask", out_mask, "output mask PNG")->required();
  app.add_option("--model", model, "model preset: tiny|full|micro")->capture_default_str();
  app.add_flag("--emit-cnn-head", emit_cnn_head,
               "also write the CNN-head mask next to the output (<out>.cnn.png)");
  CLI11_PARSE(app, argc, argv);

  try {
    DualCoreConfig cfg = model == "full"   ? DualCoreConfig::full()
                         : model == "micro" ? DualCoreConfig::micro()
                                            : DualCoreConfig::tiny();
    DualCoreNet<double> net(cfg, 0);
    load_checkpoint(net.params(), ckpt);

    GrayImage img = png_io::read_gray(image_path);
    const std::int64_t S = cfg.cgl.input_size;
    if (img.dims != Shape{S, S}) img = clamp01(resize_bicubic(img, S, S));

    NoGradGuard guard;
    Tensor<double> x({1, 1, S, S});
    std::copy(img.v.begin(), img.v.end(), x.v.begin());
    // the segmentation path only needs the tight-crop image
    auto seg = net.cgl()(Var<double>(x), FwdCtx<double>{});

    GrayImage crf_fg({S, S}), cnn_fg({S, S});
    for (std::int64_t i = 0; i < S * S; ++i) {
      crf_fg[i] = seg.crf_probs.value()[S * S + i];
      cnn_fg[i] = seg.cnn_probs.value()[S * S + i];
    }
    png_io::write_mask(out_mask, threshold_mask(crf_fg));
    if (emit_cnn_head) png_io::write_mask(out_mask + ".cnn.png", threshold_mask(cnn_fg));
    std::printf("wrote %s\n", out_mask.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "segment: %s\n", e.what());
    return 1;
  }
  return 0;
}
