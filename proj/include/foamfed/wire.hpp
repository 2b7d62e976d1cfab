#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "foamfed/metrics.hpp"
#include "foamfed/model.hpp"
#include "foamfed/tensor.hpp"

namespace foamfed {

// Any malformed frame, unknown message type, truncation, or decode overrun.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

enum class MsgType : uint8_t {
  kJoinRequest = 0x01,
  kJoinAck = 0x02,
  kFitInstruction = 0x03,
  kFitResult = 0x04,
  kEvaluateInstruction = 0x05,
  kEvaluateResult = 0x06,
  kShutdown = 0x07,
  kError = 0x7F,
};

bool is_known_msg_type(uint8_t t);

// Length-prefixed frame: magic "FFL1", u8 type, u64 big-endian payload length.
struct Frame {
  MsgType type = MsgType::kError;
  std::vector<uint8_t> payload;
};

inline constexpr size_t kFrameHeaderSize = 13;
inline constexpr uint64_t kMaxPayload = 1ull << 30;

// Byte-oriented transport. read_some returns 0 on orderly close.
class Stream {
 public:
  virtual ~Stream() = default;
  virtual size_t read_some(uint8_t* buf, size_t n) = 0;
  virtual void write_all(const uint8_t* buf, size_t n) = 0;
};

std::vector<uint8_t> encode_frame(const Frame& f);
// Parses one frame from a complete buffer; throws ProtocolError on anything
// malformed (bad magic, unknown type, length mismatch, oversized length).
Frame decode_frame(const std::vector<uint8_t>& buf);

void write_frame(Stream& s, const Frame& f);
Frame read_frame(Stream& s);

// Little-endian primitive encoding used inside payloads (the frame length
// above is the only big-endian field on the wire).
class ByteWriter {
 public:
  std::vector<uint8_t> take() { return std::move(buf_); }
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const uint8_t* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<uint8_t>& buf) : buf_(buf) {}
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void bytes(uint8_t* out, size_t n);
  size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const;

 private:
  const std::vector<uint8_t>& buf_;
  size_t pos_ = 0;
};

// Parameter encoding: u32 tensor count; per tensor u16 name length + name,
// u8 dtype (0 = f32), u8 rank, rank x u32 dims, little-endian f32 data.
std::vector<uint8_t> serialize_params(const ModelParams& p);
ModelParams deserialize_params(const std::vector<uint8_t>& buf);

// Checkpoints are the wire encoding written to disk verbatim (.fp files).
void save_checkpoint(const std::string& path, const ModelParams& p);
ModelParams load_checkpoint(const std::string& path);

// Message payloads. JoinRequest carries no payload.
struct JoinAckMsg {
  uint32_t client_id = 0;
};
struct FitInstructionMsg {
  uint32_t round = 0;
  TrainConfig config;
  ModelParams params;
};
struct FitResultMsg {
  ModelParams params;
  uint64_t n_samples = 0;
  RoundMetrics metrics;
};
struct EvaluateInstructionMsg {
  uint32_t round = 0;
  uint32_t n_samples = 0;
  ModelParams params;
};
struct EvaluateResultMsg {
  RoundMetrics metrics;
  uint64_t n_samples = 0;
};
struct ShutdownMsg {
  ModelParams params;
};
struct ErrorMsg {
  std::string text;
};

std::vector<uint8_t> encode_join_ack(const JoinAckMsg& m);
JoinAckMsg decode_join_ack(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_fit_instruction(const FitInstructionMsg& m);
FitInstructionMsg decode_fit_instruction(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_fit_result(const FitResultMsg& m);
FitResultMsg decode_fit_result(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_evaluate_instruction(const EvaluateInstructionMsg& m);
EvaluateInstructionMsg decode_evaluate_instruction(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_evaluate_result(const EvaluateResultMsg& m);
EvaluateResultMsg decode_evaluate_result(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_shutdown(const ShutdownMsg& m);
ShutdownMsg decode_shutdown(const std::vector<uint8_t>& buf);
std::vector<uint8_t> encode_error(const ErrorMsg& m);
ErrorMsg decode_error(const std::vector<uint8_t>& buf);

// POSIX TCP transport.
class TcpStream : public Stream {
 public:
  explicit TcpStream(int fd) : fd_(fd) {}
  TcpStream(TcpStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  TcpStream& operator=(TcpStream&&) = delete;
  TcpStream(const TcpStream&) = delete;
  ~TcpStream() override;

  size_t read_some(uint8_t* buf, size_t n) override;
  void write_all(const uint8_t* buf, size_t n) override;
  // Unblocks any thread stuck in read/write on this stream.
  void shutdown();
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  // address "host:port"; port 0 binds an ephemeral port.
  explicit TcpListener(const std::string& address);
  TcpListener(const TcpListener&) = delete;
  ~TcpListener();

  std::unique_ptr<TcpStream> accept();  // nullptr once closed
  void close();
  int port() const { return port_; }

 private:
  int fd_ = -1;
  int port_ = 0;
};

std::unique_ptr<TcpStream> tcp_connect(const std::string& address);

// Splits "host:port"; throws std::invalid_argument on malformed input.
std::pair<std::string, int> split_address(const std::string& address);

}  // namespace foamfed
