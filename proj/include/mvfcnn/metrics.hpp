#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfcnn/image.hpp"

namespace mvfcnn {

// counts[i][j]: pixels (or objects) of true class i predicted as class j
struct ConfusionMatrix {
    std::vector<std::vector<std::size_t>> counts;
    std::vector<std::string> class_names;

    explicit ConfusionMatrix(int n_classes = 0, std::vector<std::string> names = {})
        : counts(n_classes, std::vector<std::size_t>(n_classes, 0)),
          class_names(std::move(names)) {
        if (class_names.empty())
            for (int i = 0; i < n_classes; ++i)
                class_names.push_back("class" + std::to_string(i));
    }

    int n_classes() const { return static_cast<int>(counts.size()); }

    std::size_t row_total(int i) const {  // t_i
        std::size_t t = 0;
        for (std::size_t v : counts[i]) t += v;
        return t;
    }
    std::size_t col_total(int j) const {
        std::size_t t = 0;
        for (const auto& row : counts) t += row[j];
        return t;
    }
    std::size_t total() const {
        std::size_t t = 0;
        for (int i = 0; i < n_classes(); ++i) t += row_total(i);
        return t;
    }
    std::size_t diagonal() const {
        std::size_t t = 0;
        for (int i = 0; i < n_classes(); ++i) t += counts[i][i];
        return t;
    }
    void require_nonempty() const {
        if (total() == 0) throw std::invalid_argument("ConfusionMatrix: all counts zero");
    }
};

inline ConfusionMatrix confusion_from_labels(const Image8& truth, const Image8& pred,
                                             int n_classes) {
    if (!truth.same_dims(pred))
        throw std::invalid_argument("confusion_from_labels: dim mismatch");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth.px[i], p = pred.px[i];
        if (t >= n_classes || p >= n_classes)
            throw std::invalid_argument("confusion_from_labels: label out of range");
        ++cm.counts[t][p];
    }
    return cm;
}

// sum_i n_ii / sum_i t_i
inline double pixel_accuracy(const ConfusionMatrix& cm) {
    cm.require_nonempty();
    return static_cast<double>(cm.diagonal()) / static_cast<double>(cm.total());
}

// (1/n_cl) sum_i n_ii / t_i, classes with t_i = 0 excluded
inline double mean_accuracy(const ConfusionMatrix& cm) {
    cm.require_nonempty();
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < cm.n_classes(); ++i) {
        const std::size_t t = cm.row_total(i);
        if (t == 0) continue;
        sum += static_cast<double>(cm.counts[i][i]) / static_cast<double>(t);
        ++present;
    }
    return sum / present;
}

// (1/n_cl) sum_i n_ii / (t_i + sum_j n_ji - n_ii), classes with t_i = 0 excluded
inline double mean_iu(const ConfusionMatrix& cm) {
    cm.require_nonempty();
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < cm.n_classes(); ++i) {
        const std::size_t t = cm.row_total(i);
        if (t == 0) continue;
        const double denom = static_cast<double>(t + cm.col_total(i) - cm.counts[i][i]);
        sum += static_cast<double>(cm.counts[i][i]) / denom;
        ++present;
    }
    return sum / present;
}

// (sum_k t_k)^-1 sum_i t_i * n_ii / (t_i + sum_j n_ji - n_ii)
inline double fw_iu(const ConfusionMatrix& cm) {
    cm.require_nonempty();
    double sum = 0.0;
    for (int i = 0; i < cm.n_classes(); ++i) {
        const std::size_t t = cm.row_total(i);
        if (t == 0) continue;
        const double denom = static_cast<double>(t + cm.col_total(i) - cm.counts[i][i]);
        sum += static_cast<double>(t) * static_cast<double>(cm.counts[i][i]) / denom;
    }
    return sum / static_cast<double>(cm.total());
}

struct MetricsReport {
    double pixel_acc = 0, mean_acc = 0, mean_iu_val = 0, fw_iu_val = 0;
    std::vector<double> per_class_accuracy;  // recall n_ii/t_i, -1 when t_i = 0
    std::vector<double> per_class_iu;
    std::vector<double> per_class_precision;  // n_ii / col_total, -1 when empty
    double object_accuracy_excl_ns = 0;  // not-segmented objects dropped
    double object_accuracy_incl_ns = 0;  // not-segmented objects counted as errors
    std::size_t not_segmented = 0;
    ConfusionMatrix confusion{0};
};

inline MetricsReport segmentation_report(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.confusion = cm;
    r.pixel_acc = pixel_accuracy(cm);
    r.mean_acc = mean_accuracy(cm);
    r.mean_iu_val = mean_iu(cm);
    r.fw_iu_val = fw_iu(cm);
    for (int i = 0; i < cm.n_classes(); ++i) {
        const std::size_t t = cm.row_total(i);
        const std::size_t c = cm.col_total(i);
        r.per_class_accuracy.push_back(
            t ? static_cast<double>(cm.counts[i][i]) / t : -1.0);
        r.per_class_iu.push_back(
            t ? static_cast<double>(cm.counts[i][i]) / (t + c - cm.counts[i][i]) : -1.0);
        r.per_class_precision.push_back(
            c ? static_cast<double>(cm.counts[i][i]) / c : -1.0);
    }
    return r;
}

// Object-level confusion + precision/recall.  Two accuracy conventions are
// reported: with not-segmented objects dropped from the denominator, and with
// them counted as errors.
inline MetricsReport object_report(const std::vector<std::pair<int, int>>& truth_pred,
                                   std::size_t not_segmented, int n_classes,
                                   std::vector<std::string> class_names = {}) {
    ConfusionMatrix cm(n_classes, std::move(class_names));
    for (const auto& [t, p] : truth_pred) {
        if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
            throw std::invalid_argument("object_report: class label out of range");
        ++cm.counts[t][p];
    }
    MetricsReport r = segmentation_report(cm);
    r.not_segmented = not_segmented;
    const std::size_t counted = cm.total();
    r.object_accuracy_excl_ns =
        counted ? static_cast<double>(cm.diagonal()) / counted : 0.0;
    r.object_accuracy_incl_ns =
        counted + not_segmented
            ? static_cast<double>(cm.diagonal()) / (counted + not_segmented)
            : 0.0;
    return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j{{"pixel_accuracy", r.pixel_acc},
                     {"mean_accuracy", r.mean_acc},
                     {"mean_iu", r.mean_iu_val},
                     {"fw_iu", r.fw_iu_val},
                     {"per_class_accuracy", r.per_class_accuracy},
                     {"per_class_iu", r.per_class_iu},
                     {"per_class_precision", r.per_class_precision},
                     {"object_accuracy_excluding_not_segmented", r.object_accuracy_excl_ns},
                     {"object_accuracy_counting_not_segmented", r.object_accuracy_incl_ns},
                     {"not_segmented", r.not_segmented}};
    j["confusion"] = nlohmann::json::array();
    for (const auto& row : r.confusion.counts) j["confusion"].push_back(row);
    j["class_names"] = r.confusion.class_names;
    return j;
}

inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm) {
    os << "true\\pred";
    for (const auto& n : cm.class_names) os << "," << n;
    os << "\n";
    for (int i = 0; i < cm.n_classes(); ++i) {
        os << cm.class_names[i];
        for (int j = 0; j < cm.n_classes(); ++j) os << "," << cm.counts[i][j];
        os << "\n";
    }
}

inline void print_report_table(std::ostream& os, const MetricsReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "pixel acc %.4f | mean acc %.4f | mean IU %.4f | fw IU %.4f\n",
                  r.pixel_acc, r.mean_acc, r.mean_iu_val, r.fw_iu_val);
    os << buf;
    for (int i = 0; i < r.confusion.n_classes(); ++i) {
        std::snprintf(buf, sizeof buf, "  %-20s recall %7.4f  precision %7.4f  IU %7.4f\n",
                      r.confusion.class_names[i].c_str(), r.per_class_accuracy[i],
                      r.per_class_precision[i], r.per_class_iu[i]);
        os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "object accuracy: %.4f (excl. %zu not-segmented), %.4f (counted as errors)\n",
                  r.object_accuracy_excl_ns, r.not_segmented, r.object_accuracy_incl_ns);
    os << buf;
}

}  // namespace mvfcnn
