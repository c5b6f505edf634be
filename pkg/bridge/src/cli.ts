#!/usr/bin/env node
import { parseArgs } from 'node:util'
import { pathToFileURL } from 'node:url'

import { ManifestError } from './manifest.js'
import { UnknownModel } from './registry.js'
import { DumpReport, ModelLoadError, dumpFeatures, stubDump } from './dump.js'
import { ExtractorKind } from './registry.js'

const USAGE = `usage:
  prosolabel-bridge dump --kind speech|linguistic --model ID --manifest PATH --out DIR
                         [--model-path DIR] [--stream NAME]
  prosolabel-bridge stub --kind speech|linguistic --manifest PATH --out DIR
                         [--seed N] [--layers L] [--dim D] [--stream NAME]

Exit codes: 0 ok, 1 bad arguments, 2 dump failed.`

class UsageError extends Error {}

function requireKind(value: string | undefined): ExtractorKind {
	if (value !== 'speech' && value !== 'linguistic') {
		throw new UsageError(`--kind must be speech or linguistic, got '${value}'`)
	}
	return value
}

function requireString(value: string | undefined, flag: string): string {
	if (!value) {
		throw new UsageError(`${flag} is required`)
	}
	return value
}

function parseInteger(value: string | undefined, flag: string, fallback: number): number {
	if (value === undefined) {
		return fallback
	}
	const parsed = Number(value)
	if (!Number.isInteger(parsed)) {
		throw new UsageError(`${flag} must be an integer, got '${value}'`)
	}
	return parsed
}

function report(result: DumpReport): number {
	console.log(`wrote ${result.written.length} feature files, manifest copy ${result.manifestCopy}`)
	for (const failure of result.failures) {
		console.error(`failed ${failure.id}: ${failure.error}`)
	}
	return result.failures.length === 0 ? 0 : 2
}

export async function main(argv: string[]): Promise<number> {
	try {
		const command = argv[0]
		const rest = argv.slice(1)
		if (command === 'stub') {
			const { values } = parseArgs({
				args: rest,
				options: {
					kind: { type: 'string' },
					manifest: { type: 'string' },
					out: { type: 'string' },
					seed: { type: 'string' },
					layers: { type: 'string' },
					dim: { type: 'string' },
					stream: { type: 'string' },
				},
			})
			return report(stubDump({
				manifestPath: requireString(values.manifest, '--manifest'),
				outDir: requireString(values.out, '--out'),
				kind: requireKind(values.kind),
				seed: parseInteger(values.seed, '--seed', 0),
				layers: parseInteger(values.layers, '--layers', 4),
				dim: parseInteger(values.dim, '--dim', 16),
				stream: values.stream,
			}))
		}
		if (command === 'dump') {
			const { values } = parseArgs({
				args: rest,
				options: {
					kind: { type: 'string' },
					model: { type: 'string' },
					manifest: { type: 'string' },
					out: { type: 'string' },
					'model-path': { type: 'string' },
					stream: { type: 'string' },
				},
			})
			return report(await dumpFeatures({
				manifestPath: requireString(values.manifest, '--manifest'),
				outDir: requireString(values.out, '--out'),
				kind: requireKind(values.kind),
				model: requireString(values.model, '--model'),
				modelPath: values['model-path'],
				stream: values.stream,
			}))
		}
		console.error(USAGE)
		return 1
	} catch (err) {
		if (err instanceof UsageError || err instanceof UnknownModel || err instanceof RangeError
			|| (err as { code?: string }).code?.startsWith('ERR_PARSE_ARGS') ) {
			console.error(`error: ${(err as Error).message}`)
			return 1
		}
		if (err instanceof ModelLoadError || err instanceof ManifestError) {
			console.error(`error: ${(err as Error).message}`)
			return 2
		}
		if ((err as { code?: string }).code === 'ENOENT') {
			console.error(`error: ${(err as Error).message}`)
			return 2
		}
		throw err
	}
}

const invokedDirectly = process.argv[1] !== undefined
	&& import.meta.url === pathToFileURL(process.argv[1]).href
if (invokedDirectly) {
	main(process.argv.slice(2)).then(code => {
		process.exitCode = code
	})
}
