#include <math.h>
#include <stdio.h>
#include <string.h>

#include "roadforge.h"

static int fail(const char *what, RfStatus s) {
    char msg[256];
    rf_last_error_message(msg, sizeof msg);
    fprintf(stderr, "%s: status %d: %s\n", what, (int)s, msg);
    return 1;
}

int main(void) {
    RfIntrinsics k = {800.0, 800.0, 360.0, 240.0, 720, 480};
    RfPose pose = {{1, 0, 0, 0, -1, 0, 0, 0, -1}, {0, 0, 10}};
    double world[3] = {1.0, 2.0, 0.0};
    double px[2];
    RfStatus s = rf_project_point(&k, &pose, world, px);
    if (s != RF_STATUS_OK) return fail("project", s);
    if (fabs(px[0] - 440.0) > 1e-9 || fabs(px[1] - 80.0) > 1e-9) return fail("project value", s);

    double h[9];
    s = rf_pose_to_ground_homography(&k, &pose, &h);
    if (s != RF_STATUS_OK) return fail("homography", s);
    double g[2];
    s = rf_image_to_ground(&h, px, g);
    if (s != RF_STATUS_OK) return fail("lift", s);
    if (fabs(g[0] - 1.0) > 1e-9 || fabs(g[1] - 2.0) > 1e-9) return fail("lift value", s);

    s = rf_project_point(&k, NULL, world, px);
    if (s != RF_STATUS_NULL_POINTER) return fail("null check", s);

    RfEvaluator *ev = NULL;
    s = rf_evaluator_new(&ev);
    if (s != RF_STATUS_OK) return fail("evaluator", s);
    rf_evaluator_add_ground_truth(ev, "a", 10.0, 10.0);
    rf_evaluator_add_detection(ev, "a", 11.0, 10.0, 0.9);
    if (rf_evaluator_add_detection(ev, "b", 0, 0, 0.5) != RF_STATUS_UNKNOWN_IMAGE) return fail("unknown image", s);
    RfEvalSummary sum;
    s = rf_evaluator_compute(ev, &sum);
    if (s != RF_STATUS_OK) return fail("compute", s);
    rf_evaluator_free(ev);
    if (sum.map != 1.0 || sum.n_gt != 1 || sum.n_det != 1) return fail("summary", s);

    printf("ok %s\n", rf_version());
    return 0;
}
