#include <math.h>
#include <stdio.h>
#include <string.h>
#include "apcgnn.h"

int main(void) {
    ApcModel *model = NULL;
    ApcStatus st = apc_model_train_synthetic(120, 7, "{\"hidden\": 8, \"epochs\": 20}", &model);
    if (st != APC_STATUS_OK) {
        fprintf(stderr, "train: %s\n", apc_last_error_message());
        return 1;
    }
    double x[7] = {45, NAN, 160, 7.9, 135, 84, 2};
    double probs[3];
    size_t cls = 99;
    if (apc_model_predict(model, x, 7, probs, 3, &cls) != APC_STATUS_OK || cls > 2) return 2;
    double sum = probs[0] + probs[1] + probs[2];
    if (fabs(sum - 1.0) > 1e-9) return 3;
    if (apc_model_predict(model, x, 6, probs, 3, &cls) != APC_STATUS_INVALID_ARGUMENT) return 4;
    if (strstr(apc_last_error_message(), "features") == NULL) return 5;
    char *json = NULL;
    if (apc_model_predict_json(model, "{\"fpg\": 120}", &json) != APC_STATUS_OK) return 6;
    apc_string_free(json);
    apc_model_free(model);
    printf("ok %zu\n", cls);
    return 0;
}
