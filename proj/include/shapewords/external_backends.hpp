#pragma once

// Adapters for pretrained models served out of process. Each role is bound to
// a base URL from `backend.model_path.<role>` and spoken to with JSON over
// HTTP; matrices travel as arrays of rows, latents as flat arrays, images as
// {"height", "width", "rgb": [r, g, b, r, g, b, ...]} in [0, 1].
//
//   text      POST /tokenize {text} -> {tokens}
//             POST /encode {text} -> {embedding, tokens, eos_index}
//   shape     POST /encode {points} -> {tokens}
//   denoiser  GET  /info -> {latent_shape: [c, h, w], alphas_cumprod}
//             POST /predict_noise {latent, timestep, prompt} -> {noise}
//             POST /prompt_vjp {latent, timestep, prompt, upstream} -> {prompt_grad}
//             POST /encode_image {image} -> {latent}
//             POST /decode_latent {latent} -> {image}
//   control   POST /predict_noise {latent, timestep, prompt, depth} -> {noise}
//   features  GET  /info -> {feature_dim}
//             POST /embed_image {image} -> {features}
//             POST /embed_text {text} -> {features}
//             POST /aesthetic {image} -> {score}
//   segmenter POST /segment {image, threshold} -> {mask: {height, width, values}}
//   generator POST /generate {depth, prompt, control_strength, steps, seed} -> {image}
//   inpainter POST /inpaint {image, mask, prompt, strength, seed} -> {image}
//
// text, shape and denoiser are required; the rest are optional. Reads time out
// after backend.timeout_s seconds (default 300). On load every
// bound model is probed and its output dims checked against
// backend.text_dim / backend.shape_dim / backend.latent / backend.feature_dim.

#include "shapewords/backends.hpp"

namespace shapewords {

template <typename Scalar>
BackendSuite<Scalar> make_external_suite(const Config& config);

extern template BackendSuite<float> make_external_suite<float>(const Config&);
extern template BackendSuite<double> make_external_suite<double>(const Config&);

}  // namespace shapewords
