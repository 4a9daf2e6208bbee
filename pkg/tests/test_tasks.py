from uflossmri.tasks import _global_args, _split_extra, module_command, ns


def test_module_command_quotes_arguments() -> None:
    command = module_command("uflossmri.cli", ["evaluate", "--out", "runs/eval with space"])

    assert command == "python -m uflossmri.cli evaluate --out 'runs/eval with space'"


def test_global_args_split_comma_overrides() -> None:
    args = _global_args("tiny", None, 3, None, "unroll.epochs=2, mask.kind=poisson")

    assert args == [
        "--profile", "tiny",
        "--seed", "3",
        "--set", "unroll.epochs=2",
        "--set", "mask.kind=poisson",
    ]


def test_split_extra_handles_quotes() -> None:
    assert _split_extra("") == []
    assert _split_extra("--methods pics 'modl-l2'") == ["--methods", "pics", "modl-l2"]


def test_namespace_exposes_every_command() -> None:
    names = set(ns.task_names)

    assert {"pipeline.gen-data", "pipeline.mask-gen", "pipeline.train-recon", "pipeline.all"} <= names
    assert {"studies.study-perturb", "studies.retrieve", "studies.report"} <= names
    assert {"config.path", "config.show"} <= names
