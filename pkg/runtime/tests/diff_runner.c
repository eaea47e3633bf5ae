/* Differential harness: reads a binary case file of matmul/conv problems,
 * runs them through the packed runtime kernels, writes int32 results.
 *
 * Case file (little-endian):
 *   magic "MPDC", u32 n_cases
 *   per case: u8 kind (0 matmul | 1 conv), u8 bw, u8 ba, u8 zero
 *     matmul: u32 m,n,k;            int8 a[m*k], int8 w[n*k]
 *     conv:   u32 ic,h,w,oc,kh,kw,sh,sw,ph,pw; int8 x[ic*h*w], int8 wgt[oc*ic*kh*kw]
 * Output file: per case u32 count, int32 out[count].
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mp_runtime.h"

static const uint8_t *g_p;
static const uint8_t *g_end;

static int take(void *dst, size_t n) {
    if (g_p + n > g_end) return -1;
    memcpy(dst, g_p, n);
    g_p += n;
    return 0;
}

static uint32_t take_u32(void) {
    uint32_t v = 0;
    take(&v, 4);
    return v;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s cases.bin out.bin\n", argv[0]);
        return 1;
    }
    size_t size = 0;
    uint8_t *blob = rt_read_file(argv[1], &size);
    if (!blob) { fprintf(stderr, "cannot read %s\n", argv[1]); return 1; }
    g_p = blob;
    g_end = blob + size;
    char magic[4];
    if (take(magic, 4) || memcmp(magic, "MPDC", 4) != 0) {
        fprintf(stderr, "bad case file\n");
        return 1;
    }
    uint32_t n_cases = take_u32();
    FILE *out = fopen(argv[2], "wb");
    if (!out) { fprintf(stderr, "cannot open %s\n", argv[2]); return 1; }

    for (uint32_t c = 0; c < n_cases; c++) {
        uint8_t head[4];
        if (take(head, 4)) { fprintf(stderr, "truncated case %u\n", c); return 1; }
        int kind = head[0], bw = head[1], ba = head[2];
        if (kind == 0) {
            uint32_t m = take_u32(), n = take_u32(), k = take_u32();
            int8_t *a = malloc((size_t)m * k);
            int8_t *w = malloc((size_t)n * k);
            take(a, (size_t)m * k);
            take(w, (size_t)n * k);
            uint32_t *aw = malloc((size_t)m * rt_words_per_row(k, ba) * 4);
            uint32_t *ww = malloc((size_t)n * rt_words_per_row(k, bw) * 4);
            rt_pack_rows(a, m, k, ba, aw);
            rt_pack_rows(w, n, k, bw, ww);
            int32_t *res = malloc((size_t)m * n * 4);
            rt_matmul_packed(aw, m, ww, n, k, bw, ba, res);
            uint32_t count = m * n;
            fwrite(&count, 4, 1, out);
            fwrite(res, 4, count, out);
            free(a); free(w); free(aw); free(ww); free(res);
        } else {
            uint32_t ic = take_u32(), h = take_u32(), w_ = take_u32();
            uint32_t oc = take_u32(), kh = take_u32(), kw = take_u32();
            uint32_t sh = take_u32(), sw_ = take_u32();
            uint32_t ph = take_u32(), pw = take_u32();
            uint32_t oh = (h + 2 * ph - kh) / sh + 1;
            uint32_t ow = (w_ + 2 * pw - kw) / sw_ + 1;
            uint32_t kdim = ic * kh * kw, rows = oh * ow;
            int8_t *x = malloc((size_t)ic * h * w_);
            int8_t *wgt = malloc((size_t)oc * kdim);
            take(x, (size_t)ic * h * w_);
            take(wgt, (size_t)oc * kdim);
            uint32_t *ww = malloc((size_t)oc * rt_words_per_row(kdim, bw) * 4);
            rt_pack_rows(wgt, oc, kdim, bw, ww);
            int8_t *cols = malloc((size_t)rows * kdim);
            uint32_t *aw = malloc((size_t)rows * rt_words_per_row(kdim, ba) * 4);
            int32_t *res = malloc((size_t)rows * oc * 4);
            int32_t *chw = malloc((size_t)rows * oc * 4);
            rt_conv2d(x, ic, h, w_, ww, oc, kh, kw, sh, sw_, ph, pw, bw, ba,
                      cols, aw, res);
            rt_transpose_i32(res, rows, oc, chw); /* emit in CHW order */
            uint32_t count = rows * oc;
            fwrite(&count, 4, 1, out);
            fwrite(chw, 4, count, out);
            free(x); free(wgt); free(ww); free(cols); free(aw); free(res); free(chw);
        }
    }
    fclose(out);
    free(blob);
    return 0;
}
