import os

import numpy as np
import pytest
import yaml

from cqcnn_alzheimer.configuration import parse_config_text
from cqcnn_alzheimer.cqException import BadMagic, BadVersion, Truncated, DuplicateName, MissingDiffusionModel, \
    NoRuns, EmptyInput, ConfigurationError, BadFormat
from cqcnn_alzheimer import diffusion
from cqcnn_alzheimer.cqcnn.model import CqcnnConfig, CqcnnModel
from cqcnn_alzheimer.pipeline import commands, reports
from cqcnn_alzheimer.pipeline.checkpoint import encode_checkpoint, decode_checkpoint, save_checkpoint, \
    load_checkpoint, MAGIC
from cqcnn_alzheimer.pipeline.cli import main, EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME
from cqcnn_alzheimer.pipeline.dataset import DatasetManifest, split_counts, build_dataset, load_split, TRAIN, \
    TEST, REAL, SYNTHETIC, ALL_PLANES
from cqcnn_alzheimer.volio import pgm
from cqcnn_alzheimer.volio.nifti import Volume3D, build_nifti_bytes


def _config(**values):

    return parse_config_text("".join("%s = %s\n" % (key, value) for key, value in values.items()))


def _write_config_file(path, **values):

    path.write_text("".join("%s = %s\n" % (key, value) for key, value in values.items()))

    return str(path)


def _make_slices(root, counts, size=16, planes=('axial',), seed=0):
    """
    Write a <plane>/<class>/*.pgm tree of random images, counts maps class -> number of images
    """

    generator = np.random.default_rng(seed)

    for plane in planes:

        for name, n in counts.items():

            directory = root / plane / name
            directory.mkdir(parents=True)

            for k in range(n):

                image = generator.random((size, size)) * 0.3

                # Class CN gets a brighter center, so the classes differ
                if name == 'CN':
                    image[size // 4:3 * size // 4, size // 4:3 * size // 4] += 0.6

                pgm.save_pgm(str(directory / ("img_%03d.pgm" % k)), image)

    return str(root)


# Checkpoint files


def test_empty_checkpoint():

    raw = encode_checkpoint({})

    assert len(raw) == 12
    assert raw[:4] == MAGIC
    assert len(decode_checkpoint(raw)) == 0


def test_checkpoint_round_trip(tmp_path):

    tensors = {'conv1.w': np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7.,
               'scalar': np.array(3.5),
               'ünïcode': np.array([1.0, -2.0])}

    path = str(tmp_path / "model.ckpt")

    raw = save_checkpoint(path, tensors)

    decoded = load_checkpoint(path)

    assert list(decoded) == list(tensors)

    for name in tensors:

        assert decoded[name].shape == np.shape(tensors[name])
        assert np.array_equal(decoded[name], np.asarray(tensors[name], dtype=np.float32))

    assert encode_checkpoint(decoded) == raw


def test_checkpoint_errors(tmp_path):

    raw = encode_checkpoint({'a': np.ones((2, 2)), 'b': np.zeros(3)})

    with pytest.raises(Truncated):
        decode_checkpoint(raw[:-4])

    with pytest.raises(Truncated):
        decode_checkpoint(raw[:2])

    with pytest.raises(BadMagic):
        decode_checkpoint(b"XXXX" + raw[4:])

    with pytest.raises(BadVersion):
        decode_checkpoint(raw[:4] + np.array([2], dtype='<u4').tobytes() + raw[8:])

    with pytest.raises(DuplicateName):
        encode_checkpoint([('a', np.ones(1)), ('a', np.ones(1))])

    body = encode_checkpoint({'a': np.ones(1)})[12:]

    with pytest.raises(DuplicateName):
        decode_checkpoint(MAGIC + np.array([1, 2], dtype='<u4').tobytes() + body + body)

    path = tmp_path / "broken.ckpt"
    path.write_bytes(raw[:-4])

    with pytest.raises(Truncated) as excinfo:
        load_checkpoint(str(path))

    assert str(path) in excinfo.value.message


def test_checkpoint_name_not_utf8(tmp_path):

    raw = bytearray(encode_checkpoint({'ab': np.ones(2)}))

    # The name starts right after the 12-byte header and its u16 length
    raw[14] = 0xff

    with pytest.raises(BadFormat):
        decode_checkpoint(bytes(raw))

    path = tmp_path / "bad_name.ckpt"
    path.write_bytes(bytes(raw))

    with pytest.raises(BadFormat) as excinfo:
        load_checkpoint(str(path))

    assert str(path) in excinfo.value.message


# Dataset assembly


def test_split_counts():

    assert split_counts(90, 0.1) == (81, 9)
    assert split_counts(10, 0.1) == (9, 1)
    assert split_counts(3, 0.1) == (3, 0)


def test_build_dataset_without_balancing(tmp_path):

    dataset_dir = _make_slices(tmp_path / "slices", {'AD': 6, 'CN': 10}, planes=('axial', 'coronal'))

    config = _config(dataset_dir=dataset_dir, output_dir=tmp_path / "out", balance='false', test_fraction=0.25,
                     seed=3)

    manifest = build_dataset(config)

    assert manifest.classes == ['AD', 'CN']
    assert manifest.planes == ['axial', 'coronal']

    assert manifest.counts('axial', TEST) == {'AD': 2, 'CN': 3}
    assert manifest.counts('axial', TRAIN) == {'AD': 4, 'CN': 7}
    assert manifest.counts(ALL_PLANES, TRAIN) == {'AD': 8, 'CN': 14}

    manifest.check_test_purity()

    reloaded = DatasetManifest.load(str(tmp_path / "out" / "manifest.yaml"))

    assert reloaded.entries('coronal', TEST) == manifest.entries('coronal', TEST)

    # Same seed, same split
    again = build_dataset(config.replace(output_dir=str(tmp_path / "out2")))

    assert again.entries('axial', TEST) == manifest.entries('axial', TEST)

    test_set = load_split(manifest, 'axial', TEST, 8)

    assert test_set.images.shape == (5, 8, 8)
    assert sorted(test_set.labels) == [0, 0, 1, 1, 1]


def test_balancing_needs_a_diffusion_model(tmp_path):

    dataset_dir = _make_slices(tmp_path / "slices", {'AD': 3, 'CN': 6})

    config = _config(dataset_dir=dataset_dir, output_dir=tmp_path / "out", balance='true')

    with pytest.raises(MissingDiffusionModel):
        build_dataset(config)


def test_balancing_with_synthetic_images(tmp_path):

    dataset_dir = _make_slices(tmp_path / "slices", {'AD': 3, 'CN': 7}, size=8)

    predictor = diffusion.NoisePredictor(diffusion.NoisePredictorConfig(image_size=4, widths=(2, 4),
                                                                        embedding_dim=4))

    tensors = dict(predictor.params)
    tensors.update(diffusion.checkpoint_metadata(predictor, (3, 1e-4, 0.02)))

    checkpoint = str(tmp_path / "diffusion.ckpt")
    save_checkpoint(checkpoint, tensors)

    config = _config(dataset_dir=dataset_dir, output_dir=tmp_path / "out", balance='true', test_fraction=0.3,
                     image_size=8, diffusion_checkpoint_axial=checkpoint)

    manifest = build_dataset(config)

    # 3 AD and 7 CN: 1 and 2 go to the test split, 3 synthetic AD images make the training split even
    assert manifest.counts('axial', TRAIN) == {'AD': 5, 'CN': 5}
    assert manifest.counts('axial', TRAIN, SYNTHETIC) == {'AD': 3, 'CN': 0}
    assert manifest.counts('axial', TEST, REAL) == manifest.counts('axial', TEST)

    manifest.check_test_purity()

    synthetic = [entry.file for entry in manifest.entries('axial', TRAIN) if entry.provenance == SYNTHETIC]

    assert all(pgm.load_pgm(f).shape == (8, 8) for f in synthetic)


# Reports


def _write_run(run_dir, accuracies, plane='axial', skull_stripped=False, qubits=2, test_accuracy=None):

    os.makedirs(run_dir)

    rows = []

    for epoch, accuracy in enumerate(accuracies, start=1):

        metrics = dict.fromkeys(reports.METRICS, accuracy)

        rows.append(reports.epoch_row('run', plane, skull_stripped, qubits, 0, epoch, 'train', 0.5, metrics, 10.0))

        if test_accuracy is not None:

            rows.append(reports.epoch_row('run', plane, skull_stripped, qubits, 0, epoch, 'test', 0.4,
                                          dict.fromkeys(reports.METRICS, test_accuracy), 0.0))

    reports.write_epoch_csv(os.path.join(run_dir, reports.EPOCHS_FILE), rows)

    return run_dir


def test_format_hms():

    assert reports.format_hms(0) == "00:00:00"
    assert reports.format_hms(3661.4) == "01:01:01"
    assert reports.format_hms(59.6) == "00:01:00"


def test_report_mean_and_std(tmp_path):

    runs = [_write_run(str(tmp_path / "a"), [0.5, 0.96], test_accuracy=0.9),
            _write_run(str(tmp_path / "b"), [0.97, 0.99], test_accuracy=1.0),
            _write_run(str(tmp_path / "c"), [0.7], plane='coronal', qubits=3)]

    table = reports.cmd_report(runs)

    assert tuple(table.colnames) == reports.SUMMARY_COLUMNS
    assert len(table) == 2

    axial = table[0]

    assert axial['runs'] == 2
    assert axial['accuracy_mean'] == pytest.approx(0.95)
    assert axial['accuracy_std'] == pytest.approx(0.0707107, abs=1e-6)
    assert axial['training_time_mean'] == "00:00:20"
    assert axial['epochs_to_threshold_mean'] == pytest.approx(1.5)

    # A single run has no spread; without a test split the last training row is used
    coronal = table[1]

    assert coronal['accuracy_std'] == 0.0
    assert coronal['accuracy_mean'] == pytest.approx(0.7)
    assert np.isnan(coronal['epochs_to_threshold_mean'])

    path = str(tmp_path / "summary.csv")
    reports.write_summary(path, table)

    with open(path) as f:
        header = f.readline().strip()

    assert header == ",".join(reports.SUMMARY_COLUMNS)


def test_report_without_runs(tmp_path):

    empty = _write_run(str(tmp_path / "empty"), [])

    assert reports.read_table(os.path.join(empty, reports.EPOCHS_FILE)) is None

    with pytest.raises(NoRuns):
        reports.cmd_report([empty])


# Commands


def _write_volume(path, nx, ny, nz):

    values = (np.arange(nx * ny * nz) % 251).astype(np.int16)

    volume = Volume3D(nx, ny, nz, values)

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(build_nifti_bytes(volume, datatype=4, raw_voxels=values))


def test_slice_command(tmp_path):

    _write_volume(tmp_path / "volumes" / "AD" / "subject1.nii", 256, 192, 256)

    config = _config(input_dir=tmp_path / "volumes", output_dir=tmp_path / "sliced", image_size=16)

    written = commands.cmd_slice(config)

    assert dict(written) == {'axial': 15, 'coronal': 15, 'sagittal': 20}

    files = sorted(os.listdir(str(tmp_path / "sliced" / "axial" / "AD")))

    assert files[0] == "subject1_060.pgm" and len(files) == 15
    assert pgm.load_pgm(str(tmp_path / "sliced" / "sagittal" / "AD" / files[0].replace("060", "052"))).shape == \
        (16, 16)

    with open(str(tmp_path / "sliced" / "slices.yaml")) as f:
        listing = yaml.safe_load(f)

    assert listing['volumes']['subject1.nii']['planes']['sagittal']['interval'] == 4

    # Reruns are byte-identical
    commands.cmd_slice(config.replace(output_dir=str(tmp_path / "again")))

    for plane in ('axial', 'coronal', 'sagittal'):

        for name in os.listdir(str(tmp_path / "sliced" / plane / "AD")):

            first = (tmp_path / "sliced" / plane / "AD" / name).read_bytes()
            second = (tmp_path / "again" / plane / "AD" / name).read_bytes()

            assert first == second


def test_slice_command_without_volumes(tmp_path):

    (tmp_path / "empty").mkdir()

    with pytest.raises(EmptyInput):
        commands.cmd_slice(_config(input_dir=tmp_path / "empty", output_dir=tmp_path / "out"))


def _tiny_manifest(tmp_path, planes=('axial',), name="out"):

    dataset_dir = _make_slices(tmp_path / ("slices-%s" % name), {'AD': 4, 'CN': 4}, planes=planes)

    manifest = build_dataset(_config(dataset_dir=dataset_dir, output_dir=tmp_path / name, balance='false',
                                     test_fraction=0.25))

    return str(tmp_path / name / "manifest.yaml"), manifest


def test_zero_epochs(tmp_path):

    manifest_path, _ = _tiny_manifest(tmp_path)

    config = _config(manifest=manifest_path, output_dir=tmp_path / "runs", image_size=16, epochs=0, seed=4,
                     run_name='untrained')

    run_dir, history = commands.train_classifier(config)

    assert history == []

    with open(os.path.join(run_dir, reports.EPOCHS_FILE)) as f:
        lines = [line for line in f.read().splitlines() if line.strip() != '']

    assert lines == [",".join(reports.EPOCH_COLUMNS)]

    tensors = load_checkpoint(os.path.join(run_dir, commands.CHECKPOINT_FILE))

    initial = CqcnnModel(CqcnnConfig.from_experiment(config), seed=4)

    for name, value in initial.params.items():
        assert np.array_equal(tensors[name], value)

    evaluation = commands.cmd_evaluate(config.replace(checkpoint=os.path.join(run_dir, commands.CHECKPOINT_FILE)))

    assert evaluation.counts.total == 2
    assert os.path.exists(str(tmp_path / "runs" / "evaluation.yaml"))


def test_training_run_products(tmp_path):

    manifest_path, _ = _tiny_manifest(tmp_path)

    config = _config(manifest=manifest_path, output_dir=tmp_path / "runs", image_size=16, epochs=2,
                     record_timing='false', run_name='short')

    run_dir, history = commands.train_classifier(config)

    table = reports.read_table(os.path.join(run_dir, reports.EPOCHS_FILE))

    assert len(table) == 4
    assert list(table['split']) == ['train', 'test', 'train', 'test']
    assert np.all(table['epoch_time_s'] == 0)

    with open(os.path.join(run_dir, commands.RUN_FILE)) as f:
        summary = yaml.safe_load(f)

    assert summary['training_time'] == "00:00:00"
    assert summary['qubits'] == 2


def _read_bytes(path):

    with open(path, 'rb') as f:
        return f.read()


def test_training_reruns_are_byte_identical(tmp_path):

    manifest_path, _ = _tiny_manifest(tmp_path)

    products = []

    for name in ("first", "second"):

        # Default timing setting, dropout on, so every random stream takes part
        config = _config(manifest=manifest_path, output_dir=tmp_path / name, image_size=16, epochs=2, seed=5,
                         dropout_rate=0.5, run_name='rerun')

        run_dir, _ = commands.cmd_train(config)

        products.append({f: _read_bytes(os.path.join(run_dir, f))
                         for f in (reports.EPOCHS_FILE, commands.CHECKPOINT_FILE, commands.RUN_FILE)})

    for f in products[0]:
        assert products[0][f] == products[1][f], "%s differs between identical runs" % f

    # A different seed gives a different model
    config = _config(manifest=manifest_path, output_dir=tmp_path / "third", image_size=16, epochs=2, seed=6,
                     dropout_rate=0.5, run_name='rerun')

    run_dir, _ = commands.cmd_train(config)

    assert _read_bytes(os.path.join(run_dir, commands.CHECKPOINT_FILE)) != products[0][commands.CHECKPOINT_FILE]


def test_run_matrix(tmp_path):

    planes = ('axial', 'coronal', 'sagittal')

    manifest_path, _ = _tiny_manifest(tmp_path, planes=planes, name="raw")
    stripped_path, _ = _tiny_manifest(tmp_path, planes=planes, name="stripped")

    config = _config(manifest=manifest_path, stripped_manifest=stripped_path, output_dir=tmp_path / "matrix",
                     image_size=16, epochs=1, record_timing='false')

    table = commands.cmd_run_matrix(config)

    assert len(table) == 16
    assert set(table['plane']) == {'axial', 'coronal', 'sagittal', '3plane'}
    assert set(table['qubits']) == {2, 3}
    assert set(table['skull_stripped']) == {0, 1}
    assert os.path.exists(str(tmp_path / "matrix" / "summary.csv"))
    assert os.path.isdir(str(tmp_path / "matrix" / "3plane-stripped-q3-s0"))


def test_comparison_commands(tmp_path):

    manifest_path, _ = _tiny_manifest(tmp_path)

    config = _config(manifest=manifest_path, output_dir=tmp_path / "compare", image_size=16, epochs=1)

    rows = commands.cmd_convergence(config)

    assert [(row['model'], row['qubits']) for row in rows] == [('classical', 0), ('quantum', 2), ('quantum', 3)]

    rows = commands.cmd_ablate_optimizers(config)

    assert [row['optimizer'] for row in rows] == ['adam', 'sgd', 'rmsprop', 'adagrad']
    assert os.path.exists(str(tmp_path / "compare" / "optimizers.csv"))
    assert os.path.exists(str(tmp_path / "compare" / "convergence.csv"))


def test_convergence_table_is_reproducible(tmp_path):

    manifest_path, _ = _tiny_manifest(tmp_path)

    tables = []

    for name in ("first", "second"):

        config = _config(manifest=manifest_path, output_dir=tmp_path / name, image_size=16, epochs=3)

        rows = commands.cmd_convergence(config)

        for row in rows:

            reached = row['epochs_to_threshold']

            assert np.isnan(reached) or (reached == int(reached) and 1 <= reached <= 3)

        tables.append(_read_bytes(str(tmp_path / name / "convergence.csv")))

    assert tables[0] == tables[1]


def test_segmentation_commands(tmp_path):

    image_dir = _make_slices(tmp_path / "images", {'AD': 2})

    # Masks with the same relative names
    for name in os.listdir(str(tmp_path / "images" / "axial" / "AD")):

        target = tmp_path / "masks" / "axial" / "AD"
        target.mkdir(parents=True, exist_ok=True)

        mask = np.zeros((16, 16))
        mask[4:12, 4:12] = 1

        pgm.save_pgm(str(target / name), mask)

    config = _config(image_dir=image_dir, mask_dir=tmp_path / "masks", output_dir=tmp_path / "seg", image_size=16,
                     width_scale='1/16', segment_epochs=1, model='skullnet', run_name='unet')

    run_dir, history = commands.cmd_train(config)

    assert len(history) == 1
    assert os.path.exists(os.path.join(run_dir, 'segmentation.csv'))

    applied = config.replace(checkpoint=os.path.join(run_dir, commands.CHECKPOINT_FILE),
                             output_dir=str(tmp_path / "applied"))

    assert commands.cmd_segment_apply(applied) == 2

    assert len(os.listdir(str(tmp_path / "applied" / "masks" / "axial" / "AD"))) == 2
    assert len(os.listdir(str(tmp_path / "applied" / "stripped" / "axial" / "AD"))) == 2
    assert os.path.exists(str(tmp_path / "applied" / "segmentation_scores.csv"))


def test_diffusion_commands(tmp_path):

    image_dir = _make_slices(tmp_path / "images", {'AD': 3}, size=8)

    config = _config(image_dir=image_dir, output_dir=tmp_path / "diff", image_size=8, diffusion_widths='2,4',
                     embedding_dim=4, diffusion_steps=3, diffusion_epochs=1, diffusion_batch=2, run_name='ddpm',
                     n_samples=2)

    run_dir, history = commands.cmd_diffuse_train(config)

    assert len(history) == 1

    sampled = config.replace(checkpoint=os.path.join(run_dir, commands.CHECKPOINT_FILE))

    files = commands.cmd_diffuse_sample(sampled)

    assert len(files) == 2
    assert all(pgm.load_pgm(f).shape == (8, 8) for f in files)


# Command line


def test_cli_exit_codes(tmp_path):

    good_run = _write_run(str(tmp_path / "good"), [0.8], test_accuracy=0.75)
    empty_run = _write_run(str(tmp_path / "empty"), [])

    good = _write_config_file(tmp_path / "good.txt", run_dirs=good_run, output_dir=tmp_path / "report")
    no_runs = _write_config_file(tmp_path / "none.txt", run_dirs=empty_run, output_dir=tmp_path / "report2")
    incomplete = _write_config_file(tmp_path / "incomplete.txt", output_dir=tmp_path / "report3")
    bad_value = _write_config_file(tmp_path / "bad.txt", n_qubits=5)

    assert main(['report', '--config', good]) == EXIT_OK
    assert os.path.exists(str(tmp_path / "report" / "summary.csv"))

    assert main(['report', '--config', no_runs]) == EXIT_RUNTIME
    assert main(['report', '--config', incomplete]) == EXIT_VALIDATION
    assert main(['report', '--config', bad_value]) == EXIT_VALIDATION
    assert main(['report', '--config', str(tmp_path / "missing.txt")]) == EXIT_VALIDATION
    assert main(['not-a-command']) == EXIT_VALIDATION
    assert main(['report']) == EXIT_VALIDATION


def test_config_errors_are_configuration_errors():

    with pytest.raises(ConfigurationError):
        _config(plane='frontal')
