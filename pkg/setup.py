import re

import setuptools

with open('README.md', 'r') as file:
    long_description = file.read()

# read without importing, the package needs numpy and friends at import time
with open('tailrlab/__init__.py', 'r') as file:
    version = re.search(r"^__version__ = '([^']+)'", file.read(), re.MULTILINE).group(1)

setuptools.setup(
    name="tailrlab",
    version=version,
    license='MIT',
    packages=setuptools.find_packages(exclude=('tests', 'tests.*')),
    description="Laboratory for the TaiLr sequence training objective: verifier, synthetic oracle experiments "
                "and generation metrics.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    python_requires='>=3.8',
    install_requires=[
        'pydantic>=1.10,<2',
        'jsonpickle',
        'numpy',
        'scipy',
        'nltk',
        'matplotlib'
    ],
    extras_require={
        'test': [
            'pytest',
            'pytest-mock',
            'hypothesis'
        ]
    },
    entry_points={
        'console_scripts': [
            'tailrlab=tailrlab.cli:main'
        ]
    },
    keywords=[
        'language-modeling',
        'text-generation',
        'autodiff'
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ]
)
