"""
Gerenciador centralizado de datasets: carga por configuração e download verificado
"""

import hashlib
import logging
import tarfile
from pathlib import Path
from typing import Dict, Optional, Union

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from config.settings import AppConfig, DatasetConfig
from ingest.cifar import load_cifar10
from ingest.dataset import Dataset
from ingest.idx import load_mnist
from ingest.synthetic import synthetic_task
from utils.errors import DataError, FormatError, IntegrityError

logger = logging.getLogger(__name__)


class DatasetSources:
    """Endereços e MD5 publicados dos arquivos originais"""

    MNIST_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist/"
    MNIST = {
        "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
        "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
        "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
        "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
    }
    CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
    CIFAR10_MD5 = "c32a1d4ab5d03f1284b67883e8d87530"


class DatasetManager:
    """Carrega os splits descritos por um DatasetConfig, com cache em memória"""

    def __init__(self, config: DatasetConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self._cache: Dict[str, Dataset] = {}

    def _load(self, split: str) -> Dataset:
        kind = self.config.kind
        if kind == "synthetic":
            n = self.config.synthetic_n if split == "train" else self.config.synthetic_test_n
            return synthetic_task(self.seed, n, self.config.num_classes,
                                  self.config.synthetic_shape, split)
        path = Path(self.config.path)
        if not path.exists():
            raise DataError(f"caminho do dataset não encontrado: {path}")
        try:
            if kind == "mnist":
                return load_mnist(path, split)
            return load_cifar10(path, split)
        except (FormatError, IntegrityError) as e:
            raise DataError(f"dataset '{kind}' inválido em {path}: {e}") from e

    def load(self, split: str) -> Dataset:
        """
        Retorna o split pedido; o teste usa as constantes de normalização do treino

        Args:
            split: "train" ou "test"
        """
        if split in self._cache:
            return self._cache[split]
        if split not in ("train", "test"):
            raise ValueError(f"split desconhecido: {split}")

        dataset = self._load(split)
        if split == "train":
            dataset = dataset.subset(self.config.subset)
        else:
            train = self.load("train")
            dataset = dataset.with_stats(train.mean, train.std)
        if len(dataset) == 0:
            raise DataError(f"dataset '{self.config.kind}' ({split}) está vazio")

        self._cache[split] = dataset
        logger.info(f"Dataset {self.config.kind}/{split}: {len(dataset)} itens, shape {dataset.shape}")
        return dataset

    @property
    def augment(self) -> bool:
        return self.config.augment_enabled


def file_md5(path: Union[str, Path]) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_session(retries: int = 3, backoff: float = 1.0) -> requests.Session:
    """Sessão HTTP com retry exponencial para erros transitórios"""
    session = requests.Session()
    session.headers.update({"User-Agent": f"{AppConfig.APP_NAME.replace(' ', '-')}/{AppConfig.VERSION}"})
    retry = Retry(total=retries, backoff_factor=backoff, status_forcelist=(429, 500, 502, 503, 504))
    session.mount("https://", HTTPAdapter(max_retries=retry))
    return session


def download_with_checksum(session: requests.Session, url: str, dest: Path, md5: str,
                           timeout: int = 60) -> Path:
    """
    Baixa `url` para `dest` e confere o MD5; arquivos já válidos não são baixados

    Raises:
        DataError: falha de rede ou checksum divergente
    """
    if dest.exists() and file_md5(dest) == md5:
        logger.info(f"{dest.name} já presente e verificado")
        return dest

    tmp = dest.with_name(dest.name + ".part")
    try:
        with session.get(url, stream=True, timeout=timeout) as response:
            response.raise_for_status()
            with open(tmp, "wb") as fh:
                for chunk in response.iter_content(chunk_size=1 << 20):
                    fh.write(chunk)
    except requests.RequestException as e:
        tmp.unlink(missing_ok=True)
        raise DataError(f"falha ao baixar {url}: {e}") from e

    actual = file_md5(tmp)
    if actual != md5:
        tmp.unlink(missing_ok=True)
        raise DataError(f"MD5 divergente para {dest.name}: {actual} != {md5}")
    tmp.replace(dest)
    logger.info(f"{dest.name} baixado e verificado")
    return dest


def fetch_dataset(kind: str, dest: Union[str, Path],
                  session: Optional[requests.Session] = None) -> Path:
    """
    Baixa MNIST ou CIFAR-10 para `dest` verificando os checksums publicados

    Returns:
        Diretório pronto para dataset.path
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    session = session or build_session()

    if kind == "mnist":
        for name, md5 in DatasetSources.MNIST.items():
            download_with_checksum(session, DatasetSources.MNIST_BASE + name, dest / name, md5)
        return dest

    if kind == "cifar10":
        archive = download_with_checksum(session, DatasetSources.CIFAR10_URL,
                                         dest / "cifar-10-binary.tar.gz", DatasetSources.CIFAR10_MD5)
        with tarfile.open(archive, "r:gz") as tar:
            tar.extractall(dest, filter="data")
        return dest / "cifar-10-batches-bin"

    raise DataError(f"download não disponível para '{kind}'")
