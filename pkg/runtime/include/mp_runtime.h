/* Portable mixed-precision kernel runtime for generated inference code.
 *
 * Pure C11 integer/word operations emulating a 32-bit SIMD dot-product ISA:
 * packed operands of 8/4/2/1-bit lanes, 32-bit accumulators. The arithmetic
 * must stay bit-identical to the host-side reference executor: double
 * precision scale math, half-away-from-zero rounding implemented as
 * trunc(v + copysign(0.5, v)), float32 activations.
 */
#ifndef MP_RUNTIME_H
#define MP_RUNTIME_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
    RT_OK = 0,
    RT_ERR_MAGIC = 1,
    RT_ERR_VERSION = 2,
    RT_ERR_TRUNCATED = 3,
    RT_ERR_ARENA = 4,
    RT_ERR_MISSING_TENSOR = 5,
    RT_ERR_BAD_ARG = 6,
};

enum {
    RT_ROLE_WEIGHT = 0,
    RT_ROLE_BIAS = 1,
    RT_ROLE_QWEIGHT = 2,
    RT_ROLE_QBIAS = 3,
    RT_ROLE_DATASET = 4,
    RT_ROLE_INPUT = 5,
};

#define RT_MAX_TENSORS 64
#define RT_MAX_RANK 4

typedef struct {
    uint32_t layer;
    uint8_t role;
    uint8_t rank;
    uint32_t dims[RT_MAX_RANK];
    uint8_t bits;    /* only for QWEIGHT / QBIAS */
    float scale;     /* only for QWEIGHT / QBIAS */
    const void *data;
    uint32_t payload_words; /* payload size in 32-bit units */
} rt_entry;

typedef struct {
    rt_entry entries[RT_MAX_TENSORS];
    int count;
} rt_model;

/* --- container loading ------------------------------------------------- */

/* Parse a weights container; tensor payloads are copied into `arena` so the
 * blob itself may be unaligned or freed afterwards. */
int rt_load_weights(const uint8_t *blob, size_t size, rt_model *out,
                    uint8_t *arena, size_t arena_size);

const rt_entry *rt_model_entry(const rt_model *m, uint32_t layer, uint8_t role);

/* Read an input tensor file (role INPUT, float32) into `out[n]`. */
int rt_load_input(const uint8_t *blob, size_t size, float *out, int n);

/* Hosted convenience: read a whole file, malloc'd; NULL on failure. */
uint8_t *rt_read_file(const char *path, size_t *size_out);

/* --- quantization ------------------------------------------------------ */

/* Dynamic symmetric per-tensor quantization; returns the scale.
 * bits >= 2: scale = max|x| / (2^(bits-1)-1); bits == 1: scale = mean|x|,
 * values +-1. All-zero input gets scale 1. */
double rt_quantize_dyn(const float *x, int n, int bits, int8_t *q);

void rt_dequant(const int32_t *acc, int n, double sw, double sa, float *out);
/* acc is [rows, oc] row-major; writes out in channel-major (CHW) order. */
void rt_dequant_chw(const int32_t *acc, int rows, int oc, double sw, double sa,
                    float *out);
void rt_relu(float *x, int n);

/* acc[r*n + i] += round_half_away(bias[i] * sb / (sw * sa)) */
void rt_bias_add(int32_t *acc, int rows, int n, const int32_t *bias,
                 double sb, double sw, double sa);

/* --- packing ------------------------------------------------------------ */

/* Little-endian lane packing; element i sits at bit (i*bits)%32 of word
 * (i*bits)/32. 1-bit encodes +1 as 0, -1 as 1, so zero padding is +1. */
void rt_pack_rows(const int8_t *q, int rows, int k, int bits, uint32_t *words);
void rt_unpack_row(const uint32_t *words, int k, int bits, int8_t *q);

static inline int rt_words_per_row(int k, int bits) {
    return (k * bits + 31) / 32;
}

/* --- kernels ------------------------------------------------------------ */

/* One SIMD dot-product instruction: bw-bit lanes of rs1 (the wider operand)
 * against the low 32/bw lanes of rs2 at ba bits each, ba <= bw. */
int32_t rt_dotp(int bw, int ba, uint32_t rs1, uint32_t rs2);

/* out[i*n + j] = <a row i, w row j>; rows packed at ba / bw bits. */
void rt_matmul_packed(const uint32_t *a_words, int m, const uint32_t *w_words,
                      int n, int k, int bw, int ba, int32_t *out);

/* Patch-matrix lowering of a CHW int8 tensor; zero padding. Column order is
 * (channel, ky, kx), row order is (oy, ox). */
void rt_im2col_s8(const int8_t *x, int ic, int h, int w, int kh, int kw,
                  int sh, int sw_, int ph, int pw, int8_t *cols);

/* Quantized conv2d: im2col + pack + matmul using caller scratch buffers. */
void rt_conv2d(const int8_t *x, int ic, int h, int w,
               const uint32_t *w_words, int oc, int kh, int kw,
               int sh, int sw_, int ph, int pw, int bw, int ba,
               int8_t *cols_scratch, uint32_t *aw_scratch, int32_t *out);

void rt_transpose_i32(const int32_t *in, int rows, int cols, int32_t *out);

#ifdef __cplusplus
}
#endif

#endif /* MP_RUNTIME_H */
