#include "efficientad/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efficientad/error.hpp"
#include "efficientad/image_io.hpp"

namespace ead {
namespace fs = std::filesystem;

std::vector<std::string> list_images(const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path().string())) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetIndex index_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);
  const fs::path base(root);
  const fs::path train_dir = base / "train" / "good";
  if (!fs::is_directory(train_dir)) throw IoError("missing " + train_dir.string());

  DatasetIndex index;
  index.root = root;
  index.train = list_images(train_dir.string());

  const fs::path test_dir = base / "test";
  if (!fs::is_directory(test_dir)) return index;
  std::vector<std::string> types;
  for (const auto& e : fs::directory_iterator(test_dir)) {
    if (e.is_directory()) types.push_back(e.path().filename().string());
  }
  std::sort(types.begin(), types.end());
  for (const std::string& type : types) {
    for (const std::string& img : list_images((test_dir / type).string())) {
      TestEntry entry;
      entry.path = img;
      entry.defect_type = type;
      entry.anomalous = type != "good";
      if (entry.anomalous) {
        const std::string stem = fs::path(img).stem().string();
        const fs::path gt = base / "ground_truth" / type;
        for (const fs::path candidate : {gt / (stem + "_mask.png"), gt / (stem + ".png")}) {
          if (fs::is_regular_file(candidate)) {
            entry.mask_path = candidate.string();
            break;
          }
        }
        if (entry.mask_path && read_image_size(*entry.mask_path) != read_image_size(img)) {
          throw IoError("mask " + *entry.mask_path + " does not match the size of " + img);
        }
      }
      index.test.push_back(std::move(entry));
    }
  }
  return index;
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const fs::path dir = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (dir / fp).string();
  };
  std::vector<ManifestRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 2 || fields.size() > 3) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected 2 or 3 tab-separated fields");
    }
    ManifestRow row{resolve(fields[0]), resolve(fields[1]), std::nullopt};
    if (fields.size() == 3 && !fields[2].empty()) row.gray_features = resolve(fields[2]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows,
                    const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const std::string& c : comments) out << "# " << c << '\n';
  for (const ManifestRow& r : rows) {
    out << r.image << '\t' << r.features;
    if (r.gray_features) out << '\t' << *r.gray_features;
    out << '\n';
  }
}

}  // namespace ead
