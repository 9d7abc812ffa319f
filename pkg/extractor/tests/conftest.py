import pytest
from PIL import Image


@pytest.fixture
def make_png(tmp_path):
    """Factory writing a small solid-color PNG and returning its path."""
    counter = [0]

    def _make(color=(200, 40, 40), name=None):
        counter[0] += 1
        path = tmp_path / (name or f"img{counter[0]}.png")
        Image.new("RGB", (20, 14), color).save(path)
        return path

    return _make


@pytest.fixture
def make_avi(tmp_path):
    """Factory writing a tiny MJPG AVI with solid frames that vary by
    index, returning its path."""
    cv2 = pytest.importorskip("cv2")
    np = pytest.importorskip("numpy")
    counter = [0]

    def _make(frames=12, fps=4.0, name=None):
        counter[0] += 1
        path = tmp_path / (name or f"clip{counter[0]}.avi")
        writer = cv2.VideoWriter(
            str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (32, 24))
        assert writer.isOpened()
        for i in range(frames):
            frame = np.full((24, 32, 3), (10 + 5 * i) % 250, dtype=np.uint8)
            writer.write(frame)
        writer.release()
        return path

    return _make
