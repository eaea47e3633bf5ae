#include "mp_runtime.h"

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

/* ---------------------------------------------------------------- loader */

static uint32_t rd_u32(const uint8_t *p) {
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) |
           ((uint32_t)p[3] << 24);
}

static float rd_f32(const uint8_t *p) {
    uint32_t u = rd_u32(p);
    float f;
    memcpy(&f, &u, 4);
    return f;
}

int rt_load_weights(const uint8_t *blob, size_t size, rt_model *out,
                    uint8_t *arena, size_t arena_size) {
    size_t off = 0, arena_off = 0;
    if (size < 12) return RT_ERR_TRUNCATED;
    if (memcmp(blob, "MICO", 4) != 0) return RT_ERR_MAGIC;
    off = 4;
    uint32_t version = rd_u32(blob + off); off += 4;
    if (version != 1) return RT_ERR_VERSION;
    uint32_t count = rd_u32(blob + off); off += 4;
    if (count > RT_MAX_TENSORS) return RT_ERR_BAD_ARG;
    out->count = 0;
    for (uint32_t t = 0; t < count; t++) {
        rt_entry *e = &out->entries[out->count];
        if (off + 6 > size) return RT_ERR_TRUNCATED;
        e->layer = rd_u32(blob + off); off += 4;
        e->role = blob[off++];
        e->rank = blob[off++];
        if (e->rank > RT_MAX_RANK) return RT_ERR_BAD_ARG;
        if (off + 4u * e->rank > size) return RT_ERR_TRUNCATED;
        uint64_t n_elems = 1;
        for (int d = 0; d < e->rank; d++) {
            e->dims[d] = rd_u32(blob + off); off += 4;
            n_elems *= e->dims[d];
        }
        e->bits = 0;
        e->scale = 0.0f;
        uint64_t payload_items = n_elems;
        if (e->role == RT_ROLE_QWEIGHT || e->role == RT_ROLE_QBIAS) {
            if (off + 5 > size) return RT_ERR_TRUNCATED;
            e->bits = blob[off++];
            e->scale = rd_f32(blob + off); off += 4;
            if (e->role == RT_ROLE_QWEIGHT) {
                if (e->rank != 2 || e->bits == 0) return RT_ERR_BAD_ARG;
                payload_items =
                    (uint64_t)e->dims[0] * (uint64_t)rt_words_per_row((int)e->dims[1], e->bits);
            }
        }
        uint64_t payload_bytes = payload_items * 4;
        if (off + payload_bytes > size) return RT_ERR_TRUNCATED;
        arena_off = (arena_off + 3u) & ~(size_t)3u;
        if (arena_off + payload_bytes > arena_size) return RT_ERR_ARENA;
        memcpy(arena + arena_off, blob + off, payload_bytes);
        e->data = arena + arena_off;
        e->payload_words = (uint32_t)payload_items;
        arena_off += payload_bytes;
        off += payload_bytes;
        out->count++;
    }
    if (off != size) return RT_ERR_TRUNCATED;
    return RT_OK;
}

const rt_entry *rt_model_entry(const rt_model *m, uint32_t layer, uint8_t role) {
    for (int i = 0; i < m->count; i++) {
        if (m->entries[i].layer == layer && m->entries[i].role == role)
            return &m->entries[i];
    }
    return NULL;
}

int rt_load_input(const uint8_t *blob, size_t size, float *out, int n) {
    rt_model m;
    /* input containers are small; parse into a stack arena */
    static uint8_t scratch[1 << 16];
    int rc = rt_load_weights(blob, size, &m, scratch, sizeof(scratch));
    if (rc != RT_OK) return rc;
    const rt_entry *e = NULL;
    for (int i = 0; i < m.count; i++) {
        if (m.entries[i].role == RT_ROLE_INPUT) { e = &m.entries[i]; break; }
    }
    if (!e) return RT_ERR_MISSING_TENSOR;
    if ((int)e->payload_words != n) return RT_ERR_BAD_ARG;
    memcpy(out, e->data, (size_t)n * 4);
    return RT_OK;
}

uint8_t *rt_read_file(const char *path, size_t *size_out) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long sz = ftell(f);
    fseek(f, 0, SEEK_SET);
    if (sz < 0) { fclose(f); return NULL; }
    uint8_t *buf = malloc((size_t)sz);
    if (!buf) { fclose(f); return NULL; }
    if (fread(buf, 1, (size_t)sz, f) != (size_t)sz) {
        free(buf);
        fclose(f);
        return NULL;
    }
    fclose(f);
    *size_out = (size_t)sz;
    return buf;
}

/* ---------------------------------------------------------- quantization */

/* Round half away from zero; must match the reference executor exactly. */
static double rt_round_half_away(double v) {
    return trunc(v + copysign(0.5, v));
}

double rt_quantize_dyn(const float *x, int n, int bits, int8_t *q) {
    if (bits == 1) {
        double acc = 0.0;
        for (int i = 0; i < n; i++) acc += (double)fabsf(x[i]);
        double s = acc / (double)n;
        if (!(s > 0.0)) s = 1.0;
        for (int i = 0; i < n; i++) q[i] = (x[i] >= 0.0f) ? 1 : -1;
        return s;
    }
    float m = 0.0f;
    for (int i = 0; i < n; i++) {
        float a = fabsf(x[i]);
        if (a > m) m = a;
    }
    int lim = (1 << (bits - 1)) - 1;
    double s = (m > 0.0f) ? (double)m / (double)lim : 1.0;
    for (int i = 0; i < n; i++) {
        double v = (double)x[i] / s;
        double r = rt_round_half_away(v);
        if (r > lim) r = lim;
        if (r < -lim) r = -lim;
        q[i] = (int8_t)r;
    }
    return s;
}

void rt_dequant(const int32_t *acc, int n, double sw, double sa, float *out) {
    double s = sw * sa;
    for (int i = 0; i < n; i++) out[i] = (float)((double)acc[i] * s);
}

void rt_dequant_chw(const int32_t *acc, int rows, int oc, double sw, double sa,
                    float *out) {
    double s = sw * sa;
    for (int r = 0; r < rows; r++) {
        for (int c = 0; c < oc; c++) {
            out[c * rows + r] = (float)((double)acc[r * oc + c] * s);
        }
    }
}

void rt_relu(float *x, int n) {
    for (int i = 0; i < n; i++) {
        if (!(x[i] > 0.0f)) x[i] = 0.0f;
    }
}

void rt_bias_add(int32_t *acc, int rows, int n, const int32_t *bias,
                 double sb, double sw, double sa) {
    double factor = sb / (sw * sa);
    for (int i = 0; i < n; i++) {
        double v = (double)bias[i] * factor;
        int32_t b = (int32_t)rt_round_half_away(v);
        for (int r = 0; r < rows; r++) acc[r * n + i] += b;
    }
}

/* ---------------------------------------------------------------- packing */

void rt_pack_rows(const int8_t *q, int rows, int k, int bits, uint32_t *words) {
    int wpr = rt_words_per_row(k, bits);
    uint32_t mask = (bits == 32) ? 0xFFFFFFFFu : ((1u << bits) - 1u);
    for (int r = 0; r < rows; r++) {
        uint32_t *row = words + (size_t)r * wpr;
        for (int i = 0; i < wpr; i++) row[i] = 0;
        for (int i = 0; i < k; i++) {
            uint32_t field;
            if (bits == 1) {
                field = (q[(size_t)r * k + i] < 0) ? 1u : 0u;
            } else {
                field = (uint32_t)(uint8_t)q[(size_t)r * k + i] & mask;
            }
            int bit = i * bits;
            row[bit >> 5] |= field << (bit & 31);
        }
    }
}

void rt_unpack_row(const uint32_t *words, int k, int bits, int8_t *q) {
    uint32_t mask = (1u << bits) - 1u;
    for (int i = 0; i < k; i++) {
        int bit = i * bits;
        uint32_t field = (words[bit >> 5] >> (bit & 31)) & mask;
        if (bits == 1) {
            q[i] = field ? -1 : 1;
        } else {
            uint32_t sign = 1u << (bits - 1);
            q[i] = (int8_t)((field & sign) ? (int32_t)field - (1 << bits)
                                           : (int32_t)field);
        }
    }
}

/* ---------------------------------------------------------------- kernels */

static int32_t sext(uint32_t field, int bits) {
    uint32_t sign = 1u << (bits - 1);
    return (field & sign) ? (int32_t)field - (1 << bits) : (int32_t)field;
}

static int popcount32(uint32_t x) {
    x = x - ((x >> 1) & 0x55555555u);
    x = (x & 0x33333333u) + ((x >> 2) & 0x33333333u);
    x = (x + (x >> 4)) & 0x0F0F0F0Fu;
    return (int)((x * 0x01010101u) >> 24);
}

int32_t rt_dotp(int bw, int ba, uint32_t rs1, uint32_t rs2) {
    if (bw == 1) {
        /* XNOR-popcount: bit 0 encodes +1 */
        return 32 - 2 * popcount32(rs1 ^ rs2);
    }
    int lanes = 32 / bw;
    uint32_t mask1 = (bw == 32) ? 0xFFFFFFFFu : ((1u << bw) - 1u);
    int32_t acc = 0;
    for (int l = 0; l < lanes; l++) {
        int32_t a = sext((rs1 >> (l * bw)) & mask1, bw);
        int32_t b;
        if (ba == 1) {
            b = ((rs2 >> l) & 1u) ? -1 : 1;
        } else {
            uint32_t mask2 = (1u << ba) - 1u;
            b = sext((rs2 >> (l * ba)) & mask2, ba);
        }
        acc += a * b;
    }
    return acc;
}

void rt_matmul_packed(const uint32_t *a_words, int m, const uint32_t *w_words,
                      int n, int k, int bw, int ba, int32_t *out) {
    int wide = bw >= ba ? bw : ba;
    int narrow = bw >= ba ? ba : bw;
    int lanes = 32 / wide;
    int groups = (k + lanes - 1) / lanes;
    int group_bits = lanes * narrow;
    int wpr_a = rt_words_per_row(k, ba);
    int wpr_w = rt_words_per_row(k, bw);
    int wpr_narrow = bw >= ba ? wpr_a : wpr_w;
    int pad = groups * lanes - k;
    for (int i = 0; i < m; i++) {
        const uint32_t *arow = a_words + (size_t)i * wpr_a;
        for (int j = 0; j < n; j++) {
            const uint32_t *wrow = w_words + (size_t)j * wpr_w;
            const uint32_t *wide_row = bw >= ba ? wrow : arow;
            const uint32_t *narrow_row = bw >= ba ? arow : wrow;
            int32_t acc = 0;
            for (int g = 0; g < groups; g++) {
                uint32_t rs1 = wide_row[g];
                int bitoff = g * group_bits;
                int widx = bitoff >> 5;
                int boff = bitoff & 31;
                uint64_t chunk = (uint64_t)narrow_row[widx] >> boff;
                if (boff + group_bits > 32 && widx + 1 < wpr_narrow) {
                    chunk |= (uint64_t)narrow_row[widx + 1] << (32 - boff);
                }
                uint32_t rs2 = (uint32_t)(chunk & ((group_bits >= 32)
                                                       ? 0xFFFFFFFFull
                                                       : ((1ull << group_bits) - 1)));
                acc += rt_dotp(wide, narrow, rs1, rs2);
            }
            if (bw == 1 && ba == 1) acc -= pad; /* zero-pad lanes are +1 * +1 */
            out[(size_t)i * n + j] = acc;
        }
    }
}

void rt_im2col_s8(const int8_t *x, int ic, int h, int w, int kh, int kw,
                  int sh, int sw_, int ph, int pw, int8_t *cols) {
    int oh = (h + 2 * ph - kh) / sh + 1;
    int ow = (w + 2 * pw - kw) / sw_ + 1;
    int kdim = ic * kh * kw;
    for (int oy = 0; oy < oh; oy++) {
        for (int ox = 0; ox < ow; ox++) {
            int8_t *row = cols + (size_t)(oy * ow + ox) * kdim;
            for (int c = 0; c < ic; c++) {
                for (int ky = 0; ky < kh; ky++) {
                    for (int kx = 0; kx < kw; kx++) {
                        int iy = oy * sh + ky - ph;
                        int ix = ox * sw_ + kx - pw;
                        int col = (c * kh + ky) * kw + kx;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                            row[col] = x[(c * h + iy) * w + ix];
                        } else {
                            row[col] = 0;
                        }
                    }
                }
            }
        }
    }
}

void rt_conv2d(const int8_t *x, int ic, int h, int w,
               const uint32_t *w_words, int oc, int kh, int kw,
               int sh, int sw_, int ph, int pw, int bw, int ba,
               int8_t *cols_scratch, uint32_t *aw_scratch, int32_t *out) {
    int oh = (h + 2 * ph - kh) / sh + 1;
    int ow = (w + 2 * pw - kw) / sw_ + 1;
    int rows = oh * ow;
    int kdim = ic * kh * kw;
    rt_im2col_s8(x, ic, h, w, kh, kw, sh, sw_, ph, pw, cols_scratch);
    rt_pack_rows(cols_scratch, rows, kdim, ba, aw_scratch);
    rt_matmul_packed(aw_scratch, rows, w_words, oc, kdim, bw, ba, out);
}

void rt_transpose_i32(const int32_t *in, int rows, int cols, int32_t *out) {
    for (int r = 0; r < rows; r++) {
        for (int c = 0; c < cols; c++) {
            out[(size_t)c * rows + r] = in[(size_t)r * cols + c];
        }
    }
}
