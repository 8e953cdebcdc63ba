from moso import read_coreset, read_dataset, read_report, read_scores
from moso.cli import EXIT_GUARD, EXIT_MISSING_FILE, EXIT_OK, EXIT_PARSE, EXIT_USAGE, build_parser, main
from moso.evaluation import read_plot_data
from moso.formats import read_lines, read_manifest
from moso.seeds import component_seeds

FAST = ['--epochs', '3', '--batch', '8']


def _generate(tmp_path, *extra):
    code = main(['generate', '--classes', '4', '--per-class', '10', '--noise', '0.2', '--seed', '1',
                 '--out', str(tmp_path / 'train.ds'), '--test-out', str(tmp_path / 'test.ds'), *extra])
    assert code == EXIT_OK
    return tmp_path / 'train.ds', tmp_path / 'test.ds'


def _full_run(tmp_path):
    train, test = _generate(tmp_path)
    assert main(['score', '--data', str(train), '--method', 'moso', '--sample-steps', '5', *FAST,
                 '--seed', '2', '--out', str(tmp_path / 'moso.scores')]) == EXIT_OK
    assert main(['prune', '--data', str(train), '--scores', str(tmp_path / 'moso.scores'), '--delta', '0.3',
                 '--out', str(tmp_path / 'kept.coreset')]) == EXIT_OK
    assert main(['eval', '--train', str(train), '--test', str(test), '--coreset', str(tmp_path / 'kept.coreset'),
                 '--scores', str(tmp_path / 'moso.scores'), '--repeats', '2', *FAST,
                 '--out', str(tmp_path / 'eval.report')]) == EXIT_OK
    return tmp_path / 'eval.report'


def test_generate(tmp_path):
    train, test = _generate(tmp_path)
    train_ds, test_ds = read_dataset(train), read_dataset(test)
    assert (train_ds.N, test_ds.N) == (32, 8)
    assert train_ds.noisy.sum() > 0 and test_ds.noisy.sum() == 0
    manifest = read_manifest(read_lines(train))
    assert manifest['subcommand'] == 'generate'
    assert manifest['seed'] == 1
    assert manifest['flags']['per_class'] == 10


def test_pipeline_reruns_are_byte_identical(tmp_path):
    report = _full_run(tmp_path)
    first = {path.name: path.read_bytes() for path in tmp_path.iterdir()}
    _full_run(tmp_path)
    assert {path.name: path.read_bytes() for path in tmp_path.iterdir()} == first
    loaded = read_report(report)
    assert loaded.method == 'moso_approx'
    assert loaded.coreset_size == len(read_coreset(tmp_path / 'kept.coreset')) == 23
    assert loaded.noise is not None and loaded.noise.applicable
    sampling_seed = component_seeds(2)['sampling']
    assert read_scores(tmp_path / 'moso.scores').config_digest == f'k=5;sampling=uniform_k;sampling_seed={sampling_seed}'


def test_eval_timing_is_opt_in(tmp_path):
    report = _full_run(tmp_path)
    assert 'runtime_' not in report.read_text()
    train, test = tmp_path / 'train.ds', tmp_path / 'test.ds'
    assert main(['eval', '--train', str(train), '--test', str(test), '--coreset', str(tmp_path / 'kept.coreset'),
                 *FAST, '--timing', '--out', str(tmp_path / 'timed.report')]) == EXIT_OK
    assert 'runtime_train_evaluate=' in (tmp_path / 'timed.report').read_text()


def test_unknown_flag_is_a_usage_error(tmp_path, capsys):
    assert main(['score', '--method', 'moso', '--delta-irrelevant']) == EXIT_USAGE
    assert 'usage:' in capsys.readouterr().err


def test_prune_delta_guard(tmp_path, capsys):
    train, _ = _generate(tmp_path)
    assert main(['score', '--data', str(train), '--method', 'random', '--out', str(tmp_path / 'r.scores')]) == EXIT_OK
    assert main(['prune', '--data', str(train), '--scores', str(tmp_path / 'r.scores'), '--delta', '1.0',
                 '--out', str(tmp_path / 'kept.coreset')]) == EXIT_GUARD
    assert 'delta must be < 1' in capsys.readouterr().err
    assert not (tmp_path / 'kept.coreset').exists()


def test_missing_input_file(tmp_path):
    assert main(['score', '--data', str(tmp_path / 'absent.ds'), '--out', str(tmp_path / 'x.scores')]) \
        == EXIT_MISSING_FILE


def test_malformed_input_file(tmp_path, capsys):
    path = tmp_path / 'broken.ds'
    path.write_text('#moso-dataset v1 d=2 K=2 N=1\n0,7,0,0.5,0.5\n')
    assert main(['score', '--data', str(path), '--out', str(tmp_path / 'x.scores')]) == EXIT_PARSE
    assert 'line 2' in capsys.readouterr().err


def test_undecodable_input_is_a_parse_error(tmp_path, capsys):
    path = tmp_path / 'binary.ds'
    path.write_bytes(b'#moso-dataset v1 d=2 K=2 N=1\n0,0,0,\xff\xfe\n')
    assert main(['score', '--data', str(path), '--out', str(tmp_path / 'x.scores')]) == EXIT_PARSE
    assert 'line 2: not valid UTF-8' in capsys.readouterr().err


def test_oracle_guard(tmp_path):
    train, _ = _generate(tmp_path)
    assert main(['oracle', '--data', str(train), '--max-n', '10', '--out', str(tmp_path / 'oracle')]) == EXIT_GUARD
    assert not (tmp_path / 'oracle').exists()


def test_oracle_outputs(tmp_path):
    train, _ = _generate(tmp_path)
    assert main(['oracle', '--data', str(train), '--epochs', '2', '--batch', '32', '--budgets', '1,3',
                 '--out', str(tmp_path / 'oracle')]) == EXIT_OK
    exact = read_scores(tmp_path / 'oracle' / 'exact.scores')
    approx = read_scores(tmp_path / 'oracle' / 'approx.scores')
    assert (exact.method, approx.method) == ('moso_exact', 'moso_approx')
    assert approx.config_digest == 'sampling=all_steps'
    agreement = read_lines(tmp_path / 'oracle' / 'agreement.txt')
    assert agreement[0] == '#moso-agreement v1'
    assert 'N=32' in agreement and 'T=2' in agreement
    assert any(line.startswith('spearman=') for line in agreement)
    assert any(line.startswith('probe_epochs_1=T:1,mean_abs_error:') for line in agreement)
    assert any(line.startswith('probe_epochs_3=T:3,mean_abs_error:') for line in agreement)


def test_oracle_without_training_has_no_rank_agreement(tmp_path):
    train, _ = _generate(tmp_path)
    assert main(['oracle', '--data', str(train), '--epochs', '2', '--batch', '32', '--eta', '0', '--budgets', '1',
                 '--out', str(tmp_path / 'oracle')]) == EXIT_OK
    assert read_scores(tmp_path / 'oracle' / 'exact.scores').is_constant()
    agreement = read_lines(tmp_path / 'oracle' / 'agreement.txt')
    assert 'spearman=null' in agreement
    assert 'probe_epochs_1=T:1,mean_abs_error:0.0' in agreement


def test_compare_grid(tmp_path):
    train, test = _generate(tmp_path)
    assert main(['compare', '--train', str(train), '--test', str(test), '--methods', 'moso,random',
                 '--deltas', '0.2,0.5', *FAST, '--sample-steps', '0',
                 '--out', str(tmp_path / 'grid.csv')]) == EXIT_OK
    frame = read_plot_data(tmp_path / 'grid.csv')
    assert frame[['method', 'delta']].values.tolist() == [['moso_approx', 0.2], ['moso_approx', 0.5],
                                                          ['random', 0.2], ['random', 0.5]]
    assert frame['accuracy'].between(0, 1).all()


def test_defaults():
    args = build_parser().parse_args(['score', '--data', 'a', '--out', 'b'])
    assert (args.epochs, args.batch, args.eta, args.sample_steps, args.partitions) == (30, 32, 0.5, 10, 1)
    assert build_parser().parse_args(['oracle', '--data', 'a', '--out', 'b']).sample_steps == 0
    compare = build_parser().parse_args(['compare', '--train', 'a', '--test', 'b', '--out', 'c'])
    assert compare.deltas == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]


def test_bad_method_list_is_a_usage_error(tmp_path):
    assert main(['compare', '--train', 'a', '--test', 'b', '--methods', 'moso,shapley', '--out', 'c']) == EXIT_USAGE
