from hmm_icl.utils.config import GlobalConfig, configure_runtime, load_experiment, run_summary
