// Shared fixtures for the pipeline-level tests: a tiny phantom dataset and a
// matching minute-scale training configuration.
#ifndef WSSL_TESTS_HELPERS_HPP
#define WSSL_TESTS_HELPERS_HPP

#include <filesystem>

#include "wssl/phantom.hpp"
#include "wssl/pipeline.hpp"

namespace helpers {

namespace fs = std::filesystem;

inline wssl::phantom::PhantomConfig tiny_phantom_config() {
    wssl::phantom::PhantomConfig cfg;
    cfg.volume_shape = {12, 12, 12};
    cfg.organ_radius_min = 2.0;
    cfg.organ_radius_max = 2.5;
    cfg.tumor_radius_min = 1.0;
    cfg.tumor_radius_max = 1.8;
    cfg.tumor_contrast = 0.9;
    cfg.noise_sigma = 0.2;
    cfg.cancer_prevalence = 0.5;
    return cfg;
}

inline wssl::phantom::Manifest make_tiny_dataset(const fs::path& dir, int n = 24,
                                                 std::uint64_t seed = 5) {
    fs::remove_all(dir);
    auto man = wssl::phantom::generate_dataset(tiny_phantom_config(), n,
                                               {0.5, 0.25, 0.25}, seed, dir);
    man = wssl::phantom::assign_supervision(std::move(man), 0.5, seed);
    wssl::phantom::save_manifest(man);
    return man;
}

inline wssl::pipeline::TrainConfig tiny_train_config(const fs::path& dataset) {
    wssl::pipeline::TrainConfig cfg;
    cfg.dataset = dataset.string();
    cfg.full_fraction = 0.5;
    cfg.epochs = 3;
    cfg.warmup_epochs = 1;
    cfg.lr = 3e-3;
    cfg.batch_size = 4;
    cfg.seed = 9;
    cfg.backbone.stages = 3;
    cfg.backbone.base_channels = 2;
    cfg.backbone.input_shape = {8, 8, 8};
    cfg.backbone.text_dim = 8;
    cfg.backbone.det_channels = 3;
    cfg.backbone.loc_channels = 3;
    cfg.roi_margin_x = 4;
    cfg.roi_margin_y = 4;
    cfg.roi_margin_z = 2;
    cfg.augment.enabled = false;
    return cfg;
}

}  // namespace helpers

#endif
