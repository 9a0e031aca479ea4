#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labeldiff/image.hpp"

namespace labeldiff {

enum class ThingStuff { kThing, kStuff };
enum class Number { kSingular, kPlural };

std::string to_string(ThingStuff v);
std::string to_string(Number v);
ThingStuff parse_thing_stuff(const std::string& text);
Number parse_number(const std::string& text);

namespace evaluation {

// |a & b| / |a | b|; 1.0 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct ThresholdGrid {
  std::vector<double> values;

  // tau_k = k / divisions for k = 1 .. divisions - 1. Default: 0.0001 .. 0.9999.
  static ThresholdGrid uniform(int divisions = 10000);
  void validate() const;
};

struct EvalRecord {
  std::string phrase_id;
  double iou = 0.0;
  std::optional<ThingStuff> thing_stuff;
  std::optional<Number> number;
};

// Mean over thresholds of the fraction of records with IoU >= tau.
double average_recall(std::span<const EvalRecord> records, const ThresholdGrid& grid);
// Same quantity via sorting: each record contributes (#tau <= IoU) / (|grid| * P).
double average_recall_exact(std::span<const EvalRecord> records, const ThresholdGrid& grid);

struct ArReport {
  double overall = 0.0;
  std::optional<double> things;
  std::optional<double> stuff;
  std::optional<double> singulars;
  std::optional<double> plurals;
};

ArReport subcategory_report(std::span<const EvalRecord> records, const ThresholdGrid& grid);

// CSV writers: per-phrase "phrase_id,iou,thing_stuff,number" and the
// five-column summary "overall,things,stuff,singulars,plurals".
std::string per_phrase_csv(std::span<const EvalRecord> records);
std::string summary_csv_header();
std::string summary_csv_row(const ArReport& report);

}  // namespace evaluation
}  // namespace labeldiff
