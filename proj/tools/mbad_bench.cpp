// Times the OpenMP kernels against their serial reference implementations
// on a synthetic capture: forest training/prediction, knn batch
// prediction, kmeans fitting.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mbad/capture.hpp"
#include "mbad/eval.hpp"
#include "mbad/features.hpp"
#include "mbad/learn.hpp"
#include "mbad/synth.hpp"

namespace {

using namespace mbad;
using Clock = std::chrono::steady_clock;

template <typename F>
double time_ms(F&& fn) {
    auto t0 = Clock::now();
    fn();
    auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-24s serial %9.1f ms   openmp %9.1f ms   speedup %.2fx\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; both columns run serial code\n");
#endif

    synth::ScenarioConfig config;
    config.duration_seconds = 600.0;
    config.polling_interval_ms = 650.0;
    config.jitter_ms = 40.0;
    config.seed = 7;
    synth::AttackSpec burst;
    burst.kind = synth::AttackSpec::Kind::scan_burst;
    burst.start_second = 400.0;
    burst.duration_seconds = 1.0;
    burst.intensity = 90.0;
    synth::GeneratedCapture generated = synth::generate(config, {burst});

    capture::DissectedCapture dissected = capture::dissect_capture(generated.capture);
    capture::track_lost_segments(dissected.records);
    auto basic = features::extract_basic(dissected.records);
    auto derived = features::derive(basic);
    auto dataset = features::attach_labels(basic, derived, generated.sidecar, "bench");
    features::FeatureMatrix encoded = features::encode(dataset);
    std::printf("dataset: %zu rows x %zu features\n\n", encoded.size(), encoded.width());

    features::SplitIndices idx = features::split(encoded.labels, 0.7, 1, true);
    learn::Matrix train_rows, test_rows;
    std::vector<Label> train_labels;
    for (size_t i : idx.train) {
        train_rows.push_back(encoded.rows[i]);
        train_labels.push_back(encoded.labels[i]);
    }
    for (size_t i : idx.test) test_rows.push_back(encoded.rows[i]);

    learn::ForestParams fp;
    fp.n_trees = 500;
    learn::RandomForestModel forest_p, forest_s;
    double t_par = time_ms([&] { forest_p = learn::train_forest(train_rows, train_labels, fp, 1); });
    double t_ser =
        time_ms([&] { forest_s = learn::train_forest_serial(train_rows, train_labels, fp, 1); });
    report("forest train (500)", t_ser, t_par);

    std::vector<Label> pred_p, pred_s;
    t_par = time_ms([&] { pred_p = learn::predict_forest_batch(forest_p, test_rows); });
    t_ser = time_ms([&] { pred_s = learn::predict_forest_batch_serial(forest_s, test_rows); });
    report("forest predict", t_ser, t_par);

    features::FeatureMatrix standardized = features::standardize(encoded, idx.train);
    learn::Matrix strain, stest;
    for (size_t i : idx.train) strain.push_back(standardized.rows[i]);
    for (size_t i : idx.test) stest.push_back(standardized.rows[i]);
    learn::KnnModel knn = learn::knn_fit(strain, train_labels, 5);
    t_par = time_ms([&] { pred_p = learn::knn_predict_batch(knn, stest); });
    t_ser = time_ms([&] { pred_s = learn::knn_predict_batch_serial(knn, stest); });
    report("knn predict (k=5)", t_ser, t_par);

    learn::KMeansParams kp;
    learn::KMeansModel km_p, km_s;
    t_par = time_ms([&] { km_p = learn::kmeans_fit(standardized.rows, kp, 1); });
    t_ser = time_ms([&] { km_s = learn::kmeans_fit_serial(standardized.rows, kp, 1); });
    report("kmeans fit (k=2)", t_ser, t_par);

    bool agree = pred_p == pred_s && forest_p.trees.size() == forest_s.trees.size() &&
                 km_p.final_error == km_s.final_error;
    std::printf("\nserial/openmp outputs agree: %s\n", agree ? "yes" : "NO");
    return agree ? 0 : 1;
}
