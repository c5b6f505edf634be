import { readFileSync } from 'node:fs'

// Minimal RIFF/WAVE decoding: PCM16 and float32, any channel count
// (channels are averaged down to mono).  Enough for feature dumping;
// exotic containers should be converted upstream.

export interface RawAudio {
	samples: Float32Array
	sampleRate: number
}

export class AudioDecodeError extends Error {}

export function decodeWav(buf: Buffer, source = '<buffer>'): RawAudio {
	if (buf.length < 44 || buf.toString('ascii', 0, 4) !== 'RIFF' || buf.toString('ascii', 8, 12) !== 'WAVE') {
		throw new AudioDecodeError(`${source}: not a RIFF/WAVE file`)
	}
	let offset = 12
	let format = 0
	let channels = 0
	let sampleRate = 0
	let bitsPerSample = 0
	let dataStart = -1
	let dataLength = 0
	while (offset + 8 <= buf.length) {
		const chunkId = buf.toString('ascii', offset, offset + 4)
		const chunkSize = buf.readUInt32LE(offset + 4)
		const body = offset + 8
		if (chunkId === 'fmt ') {
			format = buf.readUInt16LE(body)
			channels = buf.readUInt16LE(body + 2)
			sampleRate = buf.readUInt32LE(body + 4)
			bitsPerSample = buf.readUInt16LE(body + 14)
		} else if (chunkId === 'data') {
			dataStart = body
			dataLength = Math.min(chunkSize, buf.length - body)
		}
		offset = body + chunkSize + (chunkSize % 2)
	}
	if (dataStart < 0 || channels < 1 || sampleRate < 1) {
		throw new AudioDecodeError(`${source}: missing fmt or data chunk`)
	}

	let interleaved: Float32Array
	if (format === 1 && bitsPerSample === 16) {
		const count = Math.floor(dataLength / 2)
		interleaved = new Float32Array(count)
		for (let i = 0; i < count; i++) {
			interleaved[i] = buf.readInt16LE(dataStart + 2 * i) / 32768
		}
	} else if (format === 3 && bitsPerSample === 32) {
		const count = Math.floor(dataLength / 4)
		interleaved = new Float32Array(count)
		for (let i = 0; i < count; i++) {
			interleaved[i] = buf.readFloatLE(dataStart + 4 * i)
		}
	} else {
		throw new AudioDecodeError(
			`${source}: unsupported encoding (format ${format}, ${bitsPerSample} bits)`)
	}

	const frames = Math.floor(interleaved.length / channels)
	if (frames === 0) {
		throw new AudioDecodeError(`${source}: no audio samples`)
	}
	if (channels === 1) {
		return { samples: interleaved.subarray(0, frames), sampleRate }
	}
	const mono = new Float32Array(frames)
	for (let i = 0; i < frames; i++) {
		let sum = 0
		for (let c = 0; c < channels; c++) {
			sum += interleaved[i * channels + c]!
		}
		mono[i] = sum / channels
	}
	return { samples: mono, sampleRate }
}

export function readWav(path: string): RawAudio {
	return decodeWav(readFileSync(path), path)
}

/** plain linear interpolation; encoders expect 16 kHz input */
export function resampleLinear(audio: RawAudio, targetRate: number): RawAudio {
	if (!Number.isInteger(targetRate) || targetRate < 1) {
		throw new RangeError(`bad target sample rate ${targetRate}`)
	}
	if (audio.sampleRate === targetRate) {
		return audio
	}
	const ratio = audio.sampleRate / targetRate
	const outLength = Math.max(1, Math.round(audio.samples.length / ratio))
	const out = new Float32Array(outLength)
	const last = audio.samples.length - 1
	for (let i = 0; i < outLength; i++) {
		const pos = Math.min(i * ratio, last)
		const lo = Math.floor(pos)
		const hi = Math.min(lo + 1, last)
		const frac = pos - lo
		out[i] = Math.fround(audio.samples[lo]! * (1 - frac) + audio.samples[hi]! * frac)
	}
	return { samples: out, sampleRate: targetRate }
}
