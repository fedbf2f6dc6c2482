#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ead {

struct TestEntry {
  std::string path;
  std::string defect_type;  // "good" for normal images
  bool anomalous = false;
  std::optional<std::string> mask_path;

  friend bool operator==(const TestEntry&, const TestEntry&) = default;
};

// MVTec-AD style layout:
//   <root>/train/good/*.png
//   <root>/test/<good|defect>/*.png
//   <root>/ground_truth/<defect>/<stem>_mask.png   (or <stem>.png)
struct DatasetIndex {
  std::string root;
  std::vector<std::string> train;
  std::vector<TestEntry> test;
};

// Lexicographically ordered index. Throws IoError when the root is not a
// directory, train/good is missing, or a mask does not match its image size.
DatasetIndex index_dataset(const std::string& root);

// Image files directly inside `dir`, sorted.
std::vector<std::string> list_images(const std::string& dir);

// One distillation pair per line: image<TAB>features[<TAB>gray_features].
// '#' lines are comments; relative paths resolve against the manifest's directory.
struct ManifestRow {
  std::string image;
  std::string features;
  std::optional<std::string> gray_features;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows,
                    const std::vector<std::string>& comments = {});

}  // namespace ead
