#include <stdio.h>
#include <string.h>
#include "prober.h"

int main(int argc, char **argv) {
    if (argc < 2) return 64;
    ProberStore *store = NULL;
    if (prober_store_open(argv[1], &store) != PROBER_STATUS_OK) return 1;
    const char *config = "{\"nodes\":[{\"id\":\"sg\",\"kind\":\"splitter\"}]}";
    const char *input = "{\"id\":\"d1\",\"value\":\"x|y\"}\n";
    char *id = NULL;
    if (prober_run_pipeline(store, config, input, "c1", &id) != PROBER_STATUS_OK) {
        fprintf(stderr, "%s\n", prober_last_error());
        return 2;
    }
    prober_string_free(id);
    ProberRun *run = NULL;
    if (prober_run_open(store, "c1", &run) != PROBER_STATUS_OK) return 3;
    char *answer = NULL;
    if (prober_provenance(run, "{\"record\":\"d1/s1\",\"kind\":\"int\"}", &answer) != PROBER_STATUS_OK) return 4;
    printf("%s\n", answer);
    prober_string_free(answer);
    if (prober_run_open(store, "nope", &run) != PROBER_STATUS_UNKNOWN_RUN) return 5;
    prober_store_free(store);
    return 0;
}
