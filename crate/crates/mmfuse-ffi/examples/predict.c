/* Minimal C consumer: load a checkpoint and a dataset, classify one
 * example, and print evaluation metrics as JSON.
 *
 * Build (from the workspace root, after `cargo build -p mmfuse-ffi`):
 *   cc examples/predict.c -Iinclude -L../../target/debug \
 *      -lmmfuse_ffi -lpthread -ldl -lm -o predict
 *   ./predict model.mmck dataset_dir
 */
#include <stdio.h>
#include <stdlib.h>

#include "mmfuse.h"

static int fail(const char *what) {
    const char *msg = mmf_last_error();
    fprintf(stderr, "%s failed: %s\n", what, msg ? msg : "(no message)");
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s CHECKPOINT DATASET_DIR\n", argv[0]);
        return 2;
    }

    MmfCheckpoint *ckpt = NULL;
    if (mmf_checkpoint_load(argv[1], &ckpt) != MMF_STATUS_OK)
        return fail("mmf_checkpoint_load");

    char *model = mmf_checkpoint_model(ckpt);
    size_t classes = 0;
    mmf_checkpoint_num_classes(ckpt, &classes);
    printf("model=%s classes=%zu version=%s\n", model, classes, mmf_version());
    mmf_string_free(model);

    MmfDataset *data = NULL;
    if (mmf_dataset_load(argv[2], &data) != MMF_STATUS_OK)
        return fail("mmf_dataset_load");
    size_t test_len = 0;
    mmf_dataset_split_len(data, MMF_SPLIT_TEST, &test_len);
    printf("test records=%zu\n", test_len);

    /* classify a synthetic example, letting the stored average image stand
     * in for the missing image */
    float text[4] = {0.5f, -0.25f, 0.1f, 0.9f};
    size_t predicted = 0;
    if (mmf_predict(ckpt, text, 1, 4, NULL, 0, 0, &predicted) != MMF_STATUS_OK)
        return fail("mmf_predict");
    printf("predicted=%zu\n", predicted);

    char *json = NULL;
    if (mmf_evaluate_json(ckpt, data, MMF_REGIME_ALL, &json) != MMF_STATUS_OK)
        return fail("mmf_evaluate_json");
    printf("%s\n", json);
    mmf_string_free(json);

    mmf_dataset_free(data);
    mmf_checkpoint_free(ckpt);
    return 0;
}
