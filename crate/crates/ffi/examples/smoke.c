#include <assert.h>
#include <math.h>
#include <stdio.h>
#include "gridphasor.h"

int main(void) {
    double out = 0.0;
    assert(gp_wrap_angle(3.0 * M_PI, &out) == GpStatus_Ok);
    assert(fabs(out - M_PI) < 1e-12);
    assert(gp_tve(1.01, 0.0, 1.0, 0.0, &out) == GpStatus_Ok);
    assert(fabs(out - 0.01) < 1e-12);

    GpStore *store = NULL;
    assert(gp_store_in_memory(&store) == GpStatus_Ok);
    int64_t ts[3] = {0, 10, 20};
    double vs[3] = {1.0, 2.0, 3.0};
    uint64_t version = 0;
    assert(gp_store_insert(store, "m/V_mag/a", ts, vs, 3, &version) == GpStatus_Ok);
    assert(version == 1);

    int64_t *qt = NULL;
    double *qv = NULL;
    size_t len = 0;
    assert(gp_store_query_raw(store, "m/V_mag/a", 0, 100, 1, &qt, &qv, &len) == GpStatus_Ok);
    assert(len == 3 && qv[2] == 3.0);
    gp_free_points(qt, qv, len);

    GpStatPoint *wins = NULL;
    size_t wlen = 0;
    assert(gp_store_query_windows(store, "m/V_mag/a", 0, 64, 6, 1, &wins, &wlen) == GpStatus_Ok);
    assert(wlen == 1 && wins[0].count == 3 && wins[0].max == 3.0);
    gp_free_stat_points(wins, wlen);

    assert(gp_store_latest_version(store, "ghost/V_mag/a", &version) == GpStatus_NotFound);
    printf("last error: %s\n", gp_last_error());
    gp_store_close(store);
    printf("ffi smoke test passed\n");
    return 0;
}
