#!/usr/bin/env python
# -*- coding: utf-8 -*-
from setuptools import (
    setup,
    find_packages,
)


setup(
    name='py-uscnet',
    # *IMPORTANT*: Don't manually change the version here. Use the 'bumpversion' utility.
    version='0.1.0',
    description="""Segmentation-guided classification of synthetic stone CT volumes fused with clinical records""",
    long_description=open('README.md', encoding='utf8').read(),
    long_description_content_type='text/markdown',
    include_package_data=True,
    python_requires='>=3.10, <4',
    install_requires=[
        "semantic_version>=2.6.0",
        "numpy>=1.23",
        "scipy>=1.9",
        "scikit-learn>=1.1",
        "pandas>=1.5",
        "click>=8.0",
    ],
    entry_points={
        'console_scripts': [
            'uscnet=uscnet.cli:main',
        ],
    },
    license="MIT",
    zip_safe=False,
    keywords='autodiff transformer segmentation multimodal fusion',
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
    ],
)
