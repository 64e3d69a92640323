#ifndef QREW_FINGERPRINT_HPP
#define QREW_FINGERPRINT_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qrew {

// Incremental SHA-256 over raw bytes; used to fingerprint parameter
// payloads and pipeline stage inputs. Unchanged digest <=> bit-identical
// bytes.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update_doubles(const double* data, std::size_t count) {
    update(data, count * sizeof(double));
  }

  // Finalizes and returns the lowercase hex digest; the object may not be
  // updated afterwards.
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace qrew

#endif  // QREW_FINGERPRINT_HPP
