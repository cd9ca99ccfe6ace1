#pragma once

// Text-to-vector encoding and semantic clustering: hashed bag-of-words
// vectors, k-means (k-means++ seeding, Lloyd iterations), bag-of-clusters
// user descriptors, and post input assembly.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "latentrank/datamodel.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/numkernel.hpp"

namespace latentrank {

// Hashed bag of words. token_count == 0 means nothing was encodable; values
// is then all zeros.
struct TextVector {
  Vec values;
  std::size_t token_count = 0;
};

// Pipeline: lowercase ASCII letters, split on anything that is not an ASCII
// letter or digit (bytes above 127 act as separators), drop tokens shorter
// than two characters, bucket = fnv1a64(token) % dim, count occurrences,
// scale by 1 / token_count. Deterministic and order-independent.
inline TextVector encode_text(std::string_view s, std::size_t dim) {
  if (dim < 1) throw ConfigError("encode_text: dim must be >= 1");
  TextVector out;
  out.values.assign(dim, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.size() >= 2) {
      out.values[fnv1a64(token) % dim] += 1.0;
      ++out.token_count;
    }
    token.clear();
  };
  for (unsigned char c : s) {
    if (c < 128 && std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  if (out.token_count > 0) {
    const double scale = 1.0 / static_cast<double>(out.token_count);
    for (double& v : out.values) v *= scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic clusters.
// ---------------------------------------------------------------------------

struct SemanticClusters {
  std::size_t k = 0;
  std::size_t dim = 0;
  DenseMatrix centroids;  // k x dim, pairwise distinct rows

  // Nearest centroid by squared Euclidean distance, ties to lowest index.
  std::size_t assign(std::span<const double> v) const {
    if (v.size() != dim) {
      throw ShapeError("cluster assign: vector dim " + std::to_string(v.size()) +
                       " != centroid dim " + std::to_string(dim));
    }
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double d2 = 0.0;
      const double* row = centroids.data.data() + c * dim;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = v[j] - row[j];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = c;
      }
    }
    return best;
  }
};

struct KMeansFit {
  SemanticClusters clusters;
  std::vector<std::size_t> assignments;  // parallel to the input vectors
  std::vector<double> inertia_history;   // one entry per assignment pass
};

namespace detail {

inline void require_distinct_rows(const DenseMatrix& m, const char* what) {
  std::set<std::vector<double>> seen;
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    if (!seen.emplace(row.begin(), row.end()).second) {
      throw NumericError(std::string(what) + ": duplicate rows");
    }
  }
}

}  // namespace detail

// Lloyd's algorithm from k-means++ seeding. Stops when an assignment pass
// changes nothing or after max_iter passes. Returned centroids are the ones
// the final assignment pass used, so assignments are exact argmins.
inline KMeansFit fit_kmeans(const std::vector<Vec>& vectors, std::size_t k,
                            Rng& rng, std::size_t max_iter = 100) {
  if (k < 1) throw ConfigError("fit_kmeans: k must be >= 1");
  if (max_iter < 1) throw ConfigError("fit_kmeans: max_iter must be >= 1");
  if (vectors.empty()) throw ConfigError("fit_kmeans: no input vectors");
  const std::size_t n = vectors.size();
  const std::size_t dim = vectors[0].size();
  for (const Vec& v : vectors) {
    if (v.size() != dim) {
      throw ShapeError("fit_kmeans: inconsistent vector dimensions");
    }
    require_finite(v, "fit_kmeans input");
  }
  {
    std::set<Vec> distinct(vectors.begin(), vectors.end());
    if (distinct.size() < k) {
      throw ConfigError("fit_kmeans: " + std::to_string(distinct.size()) +
                        " distinct vectors < k=" + std::to_string(k));
    }
  }

  auto sq_dist = [&](const Vec& a, std::span<const double> b) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = a[j] - b[j];
      d2 += diff * diff;
    }
    return d2;
  };

  // k-means++: first centroid uniform, then proportional to squared distance
  // from the nearest chosen centroid. Zero-weight points (duplicates of a
  // centroid) are never selected, so seeds are pairwise distinct.
  DenseMatrix centroids(k, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy(vectors[first].begin(), vectors[first].end(),
              centroids.data.begin());
  }
  for (std::size_t c = 1; c < k; ++c) {
    auto last = centroids.row(c - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(vectors[i], last));
      total += d2[i];
    }
    std::size_t pick = n;  // sentinel
    if (total > 0.0) {
      double r = rng.u01() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {  // float roundoff: fall back to last positive-weight point
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick == n) throw NumericError("fit_kmeans: seeding found no candidate");
    std::copy(vectors[pick].begin(), vectors[pick].end(),
              centroids.data.begin() + c * dim);
  }

  KMeansFit out;
  out.assignments.assign(n, k);  // k = unassigned sentinel
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(vectors[i], centroids.row(c));
        if (d < best_d2) {
          best_d2 = d;
          best = c;
        }
      }
      inertia += best_d2;
      if (out.assignments[i] != best) {
        out.assignments[i] = best;
        changed = true;
      }
    }
    out.inertia_history.push_back(inertia);
    if (!changed) break;
    if (iter + 1 == max_iter) break;  // keep centroids consistent with assignments

    // Update step; empty clusters keep their previous centroid.
    DenseMatrix next(k, dim);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = out.assignments[i];
      ++counts[c];
      double* row = next.data.data() + c * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] += vectors[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      double* row = next.data.data() + c * dim;
      if (counts[c] == 0) {
        auto prev = centroids.row(c);
        std::copy(prev.begin(), prev.end(), row);
      } else {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < dim; ++j) row[j] *= inv;
      }
    }
    centroids = std::move(next);
  }

  detail::require_distinct_rows(centroids, "fit_kmeans centroids");
  out.clusters.k = k;
  out.clusters.dim = dim;
  out.clusters.centroids = std::move(centroids);
  return out;
}

// ---------------------------------------------------------------------------
// Descriptor assembly.
// ---------------------------------------------------------------------------

// Bag-of-clusters histogram over the user's own profile text and each
// followee profile text, encoded and assigned independently, L1-normalized.
inline Vec user_descriptor(const User& u, const SemanticClusters& clusters) {
  Vec hist(clusters.k, 0.0);
  std::size_t encodable = 0;
  auto add = [&](const std::string& text) {
    TextVector tv = encode_text(text, clusters.dim);
    if (tv.token_count == 0) return;
    hist[clusters.assign(tv.values)] += 1.0;
    ++encodable;
  };
  add(u.profile_text);
  for (const std::string& t : u.followee_profile_texts) add(t);
  if (encodable == 0) {
    throw DegenerateInputError("user " + u.user_id + " has no encodable text");
  }
  const double inv = 1.0 / static_cast<double>(encodable);
  for (double& v : hist) v *= inv;
  return hist;
}

struct EncodingConfig {
  std::size_t text_dim = 256;
  std::size_t visual_dim = 16;
  // When true the network substitutes a trained vector for missing images;
  // otherwise the zero vector below is used as-is.
  bool learnable_no_image = false;
};

struct PostDescriptorInput {
  Vec text_vector;
  Vec visual_vector;
  bool visual_missing = false;
};

// Single text vector over all four text fields joined by single spaces, plus
// the visual features or the no-image constant (zeros) when absent.
inline PostDescriptorInput post_descriptor_input(const Post& p,
                                                 const EncodingConfig& cfg) {
  PostDescriptorInput out;
  const std::string joined = p.base_text + " " + p.hashtag_text + " " +
                             p.url_text + " " + p.reverse_image_text;
  out.text_vector = encode_text(joined, cfg.text_dim).values;
  if (p.visual_features) {
    if (p.visual_features->size() != cfg.visual_dim) {
      throw ShapeError("post " + p.post_id + ": visual_features dim " +
                       std::to_string(p.visual_features->size()) +
                       " != configured " + std::to_string(cfg.visual_dim));
    }
    out.visual_vector = *p.visual_features;
  } else {
    out.visual_vector.assign(cfg.visual_dim, 0.0);
    out.visual_missing = true;
  }
  return out;
}

struct PackedPosts {
  DenseMatrix text;    // n x text_dim
  DenseMatrix visual;  // n x visual_dim
  std::vector<unsigned char> missing;
};

inline PackedPosts pack_post_inputs(const std::vector<PostDescriptorInput>& in) {
  if (in.empty()) throw ConfigError("pack_post_inputs: empty batch");
  PackedPosts out;
  out.text = DenseMatrix(in.size(), in[0].text_vector.size());
  out.visual = DenseMatrix(in.size(), in[0].visual_vector.size());
  out.missing.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i].text_vector.size() != out.text.cols ||
        in[i].visual_vector.size() != out.visual.cols) {
      throw ShapeError("pack_post_inputs: inconsistent input dimensions");
    }
    std::copy(in[i].text_vector.begin(), in[i].text_vector.end(),
              out.text.data.begin() + i * out.text.cols);
    std::copy(in[i].visual_vector.begin(), in[i].visual_vector.end(),
              out.visual.data.begin() + i * out.visual.cols);
    out.missing[i] = in[i].visual_missing ? 1 : 0;
  }
  return out;
}

inline DenseMatrix pack_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) throw ConfigError("pack_rows: empty input");
  DenseMatrix out(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != out.cols) {
      throw ShapeError("pack_rows: inconsistent row lengths");
    }
    std::copy(rows[i].begin(), rows[i].end(), out.data.begin() + i * out.cols);
  }
  return out;
}

// Fit corpora. Unencodable texts are skipped: an all-zero vector carries no
// signal and would only pull a centroid toward the origin.
inline std::vector<Vec> user_text_corpus(const Dataset& ds,
                                         std::size_t text_dim) {
  std::vector<Vec> out;
  auto add = [&](const std::string& text) {
    TextVector tv = encode_text(text, text_dim);
    if (tv.token_count > 0) out.push_back(std::move(tv.values));
  };
  for (const User& u : ds.users) {
    add(u.profile_text);
    for (const std::string& t : u.followee_profile_texts) add(t);
  }
  return out;
}

inline std::vector<Vec> post_text_corpus(const Dataset& ds,
                                         const EncodingConfig& cfg) {
  std::vector<Vec> out;
  for (const Post& p : ds.posts) {
    TextVector tv = encode_text(p.base_text + " " + p.hashtag_text + " " +
                                    p.url_text + " " + p.reverse_image_text,
                                cfg.text_dim);
    if (tv.token_count > 0) out.push_back(std::move(tv.values));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster model file: first line "k dim", then k centroid rows of dim
// space-separated decimal values (17 significant digits, exact round-trip).
// ---------------------------------------------------------------------------

inline void save_clusters(const SemanticClusters& c,
                          const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << c.k << " " << c.dim << "\n";
  for (std::size_t r = 0; r < c.k; ++r) {
    auto row = c.centroids.row(r);
    for (std::size_t j = 0; j < c.dim; ++j) {
      if (j) out << " ";
      out << format_double(row[j]);
    }
    out << "\n";
  }
}

inline SemanticClusters load_clusters(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  SemanticClusters c;
  if (!(in >> c.k >> c.dim) || c.k < 1 || c.dim < 1) {
    throw DataError(file.string() + ": malformed cluster header");
  }
  c.centroids = DenseMatrix(c.k, c.dim);
  for (double& v : c.centroids.data) {
    if (!(in >> v)) {
      throw DataError(file.string() + ": truncated centroid data");
    }
  }
  require_finite(c.centroids.data, "cluster centroids");
  detail::require_distinct_rows(c.centroids, "loaded centroids");
  return c;
}

}  // namespace latentrank
